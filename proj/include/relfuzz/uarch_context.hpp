#pragma once

// Microarchitectural state that survives between test runs: L1D tags with LRU
// order, TLB, branch predictors and the memory-dependence predictor. MSHRs and
// in-flight requests are transient and live inside the simulator.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "relfuzz/input.hpp"
#include "relfuzz/isa.hpp"
#include "relfuzz/random.hpp"

namespace relfuzz {

struct PipelineConfig {
  int rob_size = 64;
  int fetch_width = 2;
  int issue_width = 2;
  int commit_width = 2;
  int load_hit_latency = 2;
  int l2_hit_latency = 20;
  int mem_latency = 100;
  int branch_resolve_latency = 6;
  int store_addr_resolve_latency = 12;
  int drain_after_last_commit = 0;
  bool oracle_branch_prediction = false;  // predict every Jcc correctly
  bool store_bypass = true;               // loads may pass stores with unknown address
  std::uint64_t cycle_cap = 1'000'000;

  void check() const {
    if (rob_size < 8) throw std::invalid_argument("rob_size must be >= 8");
    for (int v : {fetch_width, issue_width, commit_width, load_hit_latency, l2_hit_latency, mem_latency,
                  branch_resolve_latency, store_addr_resolve_latency})
      if (v < 1) throw std::invalid_argument("pipeline widths and latencies must be >= 1");
    if (drain_after_last_commit < 0) throw std::invalid_argument("drain_after_last_commit must be >= 0");
  }
  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

struct CacheConfig {
  int line_size = 64;
  int l1_sets = 64;
  int l1_ways = 8;
  int mshr_count = 256;
  int tlb_entries = 64;
  double l2_hit_probability = 0.5;
  std::uint64_t l2_seed = 0;

  void check() const {
    if (line_size != static_cast<int>(kLineSize)) throw std::invalid_argument("line_size must be 64");
    if (l1_sets < 1 || (l1_sets & (l1_sets - 1)) != 0) throw std::invalid_argument("l1_sets must be a power of two");
    if (l1_ways < 1) throw std::invalid_argument("l1_ways must be >= 1");
    if (mshr_count < 1) throw std::invalid_argument("mshr_count must be >= 1");
    if (tlb_entries < 1) throw std::invalid_argument("tlb_entries must be >= 1");
    if (l2_hit_probability < 0 || l2_hit_probability > 1) throw std::invalid_argument("l2_hit_probability out of [0,1]");
  }

  int set_of(std::uint64_t line_addr) const { return static_cast<int>((line_addr / kLineSize) & static_cast<std::uint64_t>(l1_sets - 1)); }

  // Fixed per (seed, line): whether the line is present in L2.
  bool l2_hit(std::uint64_t line_addr) const {
    if (l2_hit_probability >= 1.0) return true;
    const double x = static_cast<double>(splitmix64(l2_seed ^ line_addr) >> 11) * 0x1.0p-53;
    return x < l2_hit_probability;
  }
  friend bool operator==(const CacheConfig&, const CacheConfig&) = default;
};

inline constexpr int kPhtSize = 1024;
inline constexpr int kBtbSize = 64;
inline constexpr int kMdpSize = 256;
inline constexpr int kGhrBits = 10;

struct BtbEntry {
  bool valid = false;
  std::uint64_t pc = 0;
  std::uint64_t target = 0;
  friend bool operator==(const BtbEntry&, const BtbEntry&) = default;
};

struct Predictors {
  std::array<std::uint8_t, kPhtSize> pht;  // 2-bit counters
  std::uint16_t ghr = 0;
  std::array<BtbEntry, kBtbSize> btb{};
  std::array<std::uint8_t, kMdpSize> mdp{};  // 1: predict alias, wait for older stores

  Predictors() { pht.fill(1); }

  static int pht_index(std::uint64_t pc, std::uint16_t ghr) {
    return static_cast<int>(((pc >> 2) ^ ghr) & (kPhtSize - 1));
  }
  static int btb_index(std::uint64_t pc) { return static_cast<int>((pc >> 2) & (kBtbSize - 1)); }
  static int mdp_index(std::uint64_t pc) { return static_cast<int>((pc >> 2) & (kMdpSize - 1)); }

  bool predict_taken(std::uint64_t pc) const { return pht[static_cast<std::size_t>(pht_index(pc, ghr))] >= 2; }

  void update(std::uint64_t pc, bool taken, std::uint64_t target) {
    std::uint8_t& c = pht[static_cast<std::size_t>(pht_index(pc, ghr))];
    if (taken && c < 3) ++c;
    if (!taken && c > 0) --c;
    ghr = static_cast<std::uint16_t>(((ghr << 1) | (taken ? 1 : 0)) & ((1 << kGhrBits) - 1));
    if (taken) btb[static_cast<std::size_t>(btb_index(pc))] = BtbEntry{true, pc, target};
  }
  friend bool operator==(const Predictors&, const Predictors&) = default;
};

class MicroArchContext {
 public:
  MicroArchContext() : MicroArchContext(CacheConfig{}) {}
  explicit MicroArchContext(const CacheConfig& cc)
      : sets_(cc.l1_sets),
        ways_(cc.l1_ways),
        tlb_cap_(cc.tlb_entries),
        tags_(static_cast<std::size_t>(sets_ * ways_), 0),
        count_(static_cast<std::size_t>(sets_), 0) {}

  int sets() const { return sets_; }
  int ways() const { return ways_; }
  int tlb_capacity() const { return tlb_cap_; }
  int set_of(std::uint64_t line) const { return static_cast<int>((line / kLineSize) & static_cast<std::uint64_t>(sets_ - 1)); }

  // Lines of a set, MRU first.
  std::vector<std::uint64_t> set_lines(int s) const {
    auto b = tags_.begin() + s * ways_;
    return {b, b + count_[static_cast<std::size_t>(s)]};
  }
  int occupancy(int s) const { return count_[static_cast<std::size_t>(s)]; }
  std::size_t resident_count() const {
    std::size_t n = 0;
    for (int c : count_) n += static_cast<std::size_t>(c);
    return n;
  }
  std::vector<std::uint64_t> resident_lines() const {
    std::vector<std::uint64_t> out;
    for (int s = 0; s < sets_; ++s)
      for (int w = 0; w < count_[static_cast<std::size_t>(s)]; ++w) out.push_back(tags_[static_cast<std::size_t>(s * ways_ + w)]);
    return out;
  }

  bool contains(std::uint64_t line) const { return find(line) >= 0; }

  // Moves a resident line to MRU. Returns false when absent.
  bool touch(std::uint64_t line) {
    const int s = set_of(line);
    const int pos = find(line);
    if (pos < 0) return false;
    auto b = tags_.begin() + s * ways_;
    std::rotate(b, b + pos, b + pos + 1);
    return true;
  }

  // Installs at MRU (or touches if present). Returns the evicted LRU line, if any.
  std::optional<std::uint64_t> install(std::uint64_t line) {
    if (touch(line)) return std::nullopt;
    const int s = set_of(line);
    int& n = count_[static_cast<std::size_t>(s)];
    auto b = tags_.begin() + s * ways_;
    std::optional<std::uint64_t> victim;
    if (n == ways_) {
      victim = b[ways_ - 1];
      --n;
    }
    std::copy_backward(b, b + n, b + n + 1);
    b[0] = line;
    ++n;
    return victim;
  }

  // Inserts at the LRU end when the set has room. Returns false otherwise.
  bool insert_lru(std::uint64_t line) {
    if (contains(line)) return true;
    const int s = set_of(line);
    int& n = count_[static_cast<std::size_t>(s)];
    if (n == ways_) return false;
    tags_[static_cast<std::size_t>(s * ways_ + n)] = line;
    ++n;
    return true;
  }

  std::optional<std::uint64_t> lru_of_full_set(std::uint64_t line) const {
    const int s = set_of(line);
    if (count_[static_cast<std::size_t>(s)] < ways_) return std::nullopt;
    return tags_[static_cast<std::size_t>(s * ways_ + ways_ - 1)];
  }

  bool remove(std::uint64_t line) {
    const int s = set_of(line);
    const int pos = find(line);
    if (pos < 0) return false;
    int& n = count_[static_cast<std::size_t>(s)];
    auto b = tags_.begin() + s * ways_;
    std::copy(b + pos + 1, b + n, b + pos);
    --n;
    return true;
  }

  void clear_l1() { std::fill(count_.begin(), count_.end(), 0); std::fill(tags_.begin(), tags_.end(), 0); }

  // TLB of page numbers, MRU first.
  const std::vector<std::uint64_t>& tlb() const { return tlb_; }
  bool tlb_contains(std::uint64_t page) const { return std::find(tlb_.begin(), tlb_.end(), page) != tlb_.end(); }
  // Returns true on a hit.
  bool tlb_access(std::uint64_t page) {
    auto it = std::find(tlb_.begin(), tlb_.end(), page);
    if (it != tlb_.end()) {
      std::rotate(tlb_.begin(), it, it + 1);
      return true;
    }
    tlb_.insert(tlb_.begin(), page);
    if (static_cast<int>(tlb_.size()) > tlb_cap_) tlb_.pop_back();
    return false;
  }
  void tlb_erase_if(auto pred) { std::erase_if(tlb_, pred); }
  void clear_tlb() { tlb_.clear(); }

  Predictors& predictors() { return bp_; }
  const Predictors& predictors() const { return bp_; }

  friend bool operator==(const MicroArchContext& a, const MicroArchContext& b) {
    if (a.sets_ != b.sets_ || a.ways_ != b.ways_ || a.tlb_cap_ != b.tlb_cap_ || a.count_ != b.count_ ||
        a.tlb_ != b.tlb_ || !(a.bp_ == b.bp_))
      return false;
    for (int s = 0; s < a.sets_; ++s)
      for (int w = 0; w < a.count_[static_cast<std::size_t>(s)]; ++w)
        if (a.tags_[static_cast<std::size_t>(s * a.ways_ + w)] != b.tags_[static_cast<std::size_t>(s * b.ways_ + w)]) return false;
    return true;
  }

  std::vector<std::uint8_t> serialize() const;
  static MicroArchContext deserialize(const std::vector<std::uint8_t>& bytes);

 private:
  int find(std::uint64_t line) const {
    const int s = set_of(line);
    const auto* b = tags_.data() + s * ways_;
    for (int w = 0; w < count_[static_cast<std::size_t>(s)]; ++w)
      if (b[w] == line) return w;
    return -1;
  }

  int sets_;
  int ways_;
  int tlb_cap_;
  std::vector<std::uint64_t> tags_;
  std::vector<int> count_;
  std::vector<std::uint64_t> tlb_;
  Predictors bp_;
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct ByteReader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;
  std::uint64_t u64() {
    if (pos + 8 > b.size()) throw std::invalid_argument("truncated context image");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[pos + static_cast<std::size_t>(i)]} << (8 * i);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    if (pos >= b.size()) throw std::invalid_argument("truncated context image");
    return b[pos++];
  }
};

inline constexpr std::uint64_t kContextMagic = 0x31787463667a6c72ULL;  // "rlzfctx1"

}  // namespace detail

inline std::vector<std::uint8_t> MicroArchContext::serialize() const {
  using detail::put_u64;
  std::vector<std::uint8_t> out;
  put_u64(out, detail::kContextMagic);
  put_u64(out, static_cast<std::uint64_t>(sets_));
  put_u64(out, static_cast<std::uint64_t>(ways_));
  put_u64(out, static_cast<std::uint64_t>(tlb_cap_));
  for (int s = 0; s < sets_; ++s) {
    out.push_back(static_cast<std::uint8_t>(count_[static_cast<std::size_t>(s)]));
    for (int w = 0; w < count_[static_cast<std::size_t>(s)]; ++w) put_u64(out, tags_[static_cast<std::size_t>(s * ways_ + w)]);
  }
  put_u64(out, tlb_.size());
  for (std::uint64_t p : tlb_) put_u64(out, p);
  out.insert(out.end(), bp_.pht.begin(), bp_.pht.end());
  put_u64(out, bp_.ghr);
  for (const BtbEntry& e : bp_.btb) {
    out.push_back(e.valid ? 1 : 0);
    put_u64(out, e.pc);
    put_u64(out, e.target);
  }
  out.insert(out.end(), bp_.mdp.begin(), bp_.mdp.end());
  return out;
}

inline MicroArchContext MicroArchContext::deserialize(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r{bytes};
  if (r.u64() != detail::kContextMagic) throw std::invalid_argument("not a context image");
  CacheConfig cc;
  cc.l1_sets = static_cast<int>(r.u64());
  cc.l1_ways = static_cast<int>(r.u64());
  cc.tlb_entries = static_cast<int>(r.u64());
  cc.check();
  MicroArchContext ctx(cc);
  for (int s = 0; s < ctx.sets_; ++s) {
    const int n = r.u8();
    if (n > ctx.ways_) throw std::invalid_argument("set occupancy exceeds ways");
    ctx.count_[static_cast<std::size_t>(s)] = n;
    for (int w = 0; w < n; ++w) ctx.tags_[static_cast<std::size_t>(s * ctx.ways_ + w)] = r.u64();
  }
  const std::uint64_t tn = r.u64();
  if (tn > static_cast<std::uint64_t>(ctx.tlb_cap_)) throw std::invalid_argument("TLB occupancy exceeds capacity");
  for (std::uint64_t i = 0; i < tn; ++i) ctx.tlb_.push_back(r.u64());
  for (auto& c : ctx.bp_.pht) c = r.u8();
  ctx.bp_.ghr = static_cast<std::uint16_t>(r.u64());
  for (BtbEntry& e : ctx.bp_.btb) {
    e.valid = r.u8() != 0;
    e.pc = r.u64();
    e.target = r.u64();
  }
  for (auto& m : ctx.bp_.mdp) m = r.u8();
  if (r.pos != bytes.size()) throw std::invalid_argument("trailing bytes in context image");
  return ctx;
}

inline MicroArchContext snapshot_context(const MicroArchContext& ctx) { return ctx; }
inline void restore_context(MicroArchContext& dst, const MicroArchContext& snap) { dst = snap; }

enum class ResetPolicy : std::uint8_t { FillOutsideSandbox, DirectInvalidate };

inline const char* reset_policy_name(ResetPolicy p) {
  return p == ResetPolicy::FillOutsideSandbox ? "FILL_OUTSIDE_SANDBOX" : "DIRECT_INVALIDATE";
}

// Base of the priming region: first address at or above max(sandbox, 64 KiB)
// aligned to the L1 way size, so prime line (way, set) never aliases the sandbox.
inline std::uint64_t prime_base(const SandboxConfig& sb, int sets) {
  const std::uint64_t way_bytes = static_cast<std::uint64_t>(sets) * kLineSize;
  const std::uint64_t lo = std::max<std::uint64_t>(sb.size(), 0x10000);
  return (lo + way_bytes - 1) / way_bytes * way_bytes;
}

inline std::uint64_t prime_line(const SandboxConfig& sb, int sets, int way, int set) {
  return prime_base(sb, sets) + static_cast<std::uint64_t>(way) * static_cast<std::uint64_t>(sets) * kLineSize +
         static_cast<std::uint64_t>(set) * kLineSize;
}

inline bool is_prime_line(const SandboxConfig& sb, int sets, std::uint64_t line) {
  return line >= prime_base(sb, sets);
}

// Predictor and MDP state are preserved by both policies.
inline MicroArchContext reset_context(const MicroArchContext& ctx, ResetPolicy policy, const SandboxConfig& sb) {
  MicroArchContext out = ctx;
  out.clear_l1();
  if (policy == ResetPolicy::DirectInvalidate) {
    out.clear_tlb();
    return out;
  }
  // Way 0 is installed last so it ends up MRU.
  for (int s = 0; s < out.sets(); ++s)
    for (int w = out.ways() - 1; w >= 0; --w) out.install(prime_line(sb, out.sets(), w, s));
  const std::uint64_t sandbox_pages = sb.size() / kPageSize;
  out.tlb_erase_if([&](std::uint64_t page) { return page < sandbox_pages; });
  return out;
}

}  // namespace relfuzz
