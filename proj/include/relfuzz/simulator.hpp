#pragma once

// Cycle-stepped out-of-order core: fetch with gshare prediction into a ROB,
// oldest-first issue, in-order commit. Loads may bypass stores whose address
// is still unknown (memory-order squash on alias). Memory requests go through
// an in-order cache queue backed by MSHRs; a head request that finds no free
// MSHR blocks everything behind it.
//
// Per-cycle order: fills, commit, branch/store resolution, status update,
// issue, cache queue, fetch.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "relfuzz/debug_log.hpp"
#include "relfuzz/defenses.hpp"
#include "relfuzz/input.hpp"
#include "relfuzz/isa.hpp"
#include "relfuzz/leakage_model.hpp"
#include "relfuzz/uarch_context.hpp"

namespace relfuzz {

class SimError : public std::runtime_error {
 public:
  enum class Kind { StepCapExceeded, ContextCorrupt, InvalidProgram };
  SimError(Kind k, const std::string& m) : std::runtime_error(m), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct MemEvent {
  std::uint64_t pc = 0;
  std::uint64_t line = 0;
  bool is_store = false;
  bool speculative = false;
  friend bool operator==(const MemEvent&, const MemEvent&) = default;
};

struct BranchEvent {
  std::uint64_t pc = 0;
  std::uint64_t predicted_target = 0;
  std::uint64_t actual_target = 0;  // 0 when the branch was squashed before resolving
  friend bool operator==(const BranchEvent&, const BranchEvent&) = default;
};

struct RunResult {
  MicroArchContext final_ctx;
  DebugLog log;
  std::vector<MemEvent> mem_events;
  std::vector<BranchEvent> branch_events;
  ArchState committed;
  std::uint64_t committed_instruction_count = 0;
  std::uint64_t cycles = 0;
  std::uint64_t sandbox_size = 0;
  // Per L1 set: how many out-of-sandbox (primed) lines were lost during the run.
  std::vector<std::uint8_t> outside_evictions;
  std::uint64_t branch_squashes = 0;
  std::uint64_t memory_order_squashes = 0;
};

struct SimOptions {
  bool record_log = true;
  bool keep_memory = false;  // materialize committed memory into RunResult::committed
};

namespace detail {

inline constexpr std::uint64_t kNever = ~std::uint64_t{0};
inline constexpr int kFlagsReg = 8;

inline std::uint64_t encode_flags(Flags f) { return (f.z ? 1u : 0u) | (f.s ? 2u : 0u); }
inline Flags decode_flags(std::uint64_t v) { return Flags{(v & 1) != 0, (v & 2) != 0}; }

struct SInst {
  enum Kind : std::uint8_t { Body, Jcc, Jmp, Exit };
  Kind kind = Body;
  const Instruction* in = nullptr;
  Cond cc = Cond::Z;
  std::uint64_t pc = 0;
  int next = -1;
  int taken = -1;
};

struct Undo {
  std::uint64_t line;
  std::uint64_t victim;
  bool has_victim;
};

// Request / MSHR classes. Normal requests install on fill and may merge;
// the others belong to one owner and are handled by the active defense.
enum class ReqClass : std::uint8_t { Normal, Invisible, Tracked, Unsafe, Expose, Writeback };

struct Entry {
  std::uint64_t seq = 0;
  int si = 0;
  const SInst* s = nullptr;
  int nsrc = 0;
  std::array<std::uint8_t, 3> src_reg{};
  std::array<std::uint64_t, 3> src_prod{};
  bool writes_reg = false;
  bool writes_flags = false;
  bool issued = false;
  std::uint64_t done_cycle = kNever;
  std::uint64_t value = 0;
  std::uint64_t fl = 0;

  // status, recomputed every cycle
  bool spec = false;
  bool tainted = false;
  bool taint_logged = false;

  // branches
  bool pred_taken = false;
  bool resolved = false;
  bool actual_taken = false;
  std::uint64_t resolve_cycle = kNever;
  std::size_t branch_event = 0;

  // memory
  std::uint64_t offset = 0;
  int width = 0;
  bool addr_ready = false;     // store: offset computed
  bool addr_resolved = false;  // store: visible to disambiguation
  std::uint64_t resolve_at = kNever;
  bool tlb_leaked = false;
  std::vector<std::uint64_t> train_pcs;

  bool bypassed = false;
  int pending = 0;
  std::uint64_t data_cycle = 0;
  std::array<std::uint64_t, 2> lines{};
  int nlines = 0;
  bool invisible = false;
  bool lfb_unsafe = false;
  std::vector<std::uint64_t> held;
  std::vector<Undo> undo;

  bool is(SInst::Kind k) const { return s->kind == k; }
  bool is_load() const { return s->kind == SInst::Body && s->in->op == Opcode::LOAD; }
  bool is_store() const { return s->kind == SInst::Body && s->in->op == Opcode::STORE; }
};

struct Req {
  std::uint64_t seq = 0;
  std::uint64_t pc = 0;
  std::uint64_t line = 0;
  ReqClass cls = ReqClass::Normal;
  bool is_store = false;
  bool spec = false;
  bool split = false;
  bool stalled = false;
};

struct Mshr {
  std::uint64_t line = 0;
  std::uint64_t ready = 0;
  ReqClass cls = ReqClass::Normal;
  std::uint64_t owner = 0;
  std::uint64_t pc = 0;
  bool spec = false;
  bool owner_squashed = false;
  std::vector<std::uint64_t> waiters;
};

struct SpecBufEntry {
  std::uint64_t line;
  std::uint64_t owner;
};

class Core {
 public:
  Core(const Program& p, const TestInput& in, const MicroArchContext& ctx, const DefensePolicy& def,
       const PipelineConfig& pc, const CacheConfig& cc, const SimOptions& opt)
      : p_(p), def_(def), pc_(pc), cc_(cc), opt_(opt), ctx_(ctx), mem_(in.memory) {
    pc_.check();
    cc_.check();
    if (ctx.sets() != cc.l1_sets || ctx.ways() != cc.l1_ways || ctx.tlb_capacity() != cc.tlb_entries)
      throw SimError(SimError::Kind::ContextCorrupt, "context geometry does not match cache config");
    const std::size_t n = in.memory.size();
    if (n < kPageSize || (n & (n - 1)) != 0) throw SimError(SimError::Kind::InvalidProgram, "sandbox size is not a power of two");
    sb_ = SandboxConfig{static_cast<int>(n / kPageSize)};
    mask_ = n - 1;
    if (!validate_program(p, sb_).ok()) throw SimError(SimError::Kind::InvalidProgram, "program failed validation");
    regs_ = in.regs;
    build();
    if (pc_.oracle_branch_prediction) arch_outcomes_ = run_contract(p, in, ContractId::ct_seq()).branch_outcomes;
    initial_outside_ = outside_counts();
  }

  RunResult run() {
    std::uint64_t c = 0;
    for (;; ++c) {
      if (c > pc_.cycle_cap) throw SimError(SimError::Kind::StepCapExceeded, "cycle cap exceeded");
      bool progress = fills(c);
      progress |= commit(c);
      if (exited_ && c >= exit_cycle_ + static_cast<std::uint64_t>(pc_.drain_after_last_commit)) break;
      progress |= resolve(c);
      update_status();
      progress |= lfb_release(c);
      progress |= issue(c);
      progress |= process_queue(c);
      progress |= fetch(c);
      if (!progress) {
        std::uint64_t next = next_event(c);
        if (next == kNever) throw SimError(SimError::Kind::ContextCorrupt, "pipeline deadlock");
        c = next - 1;
      }
    }
    RunResult r;
    r.cycles = c;
    r.final_ctx = ctx_;
    r.log = std::move(log_);
    r.mem_events = std::move(mem_events_);
    r.branch_events = std::move(branch_events_);
    r.committed.regs = regs_;
    r.committed.flags = flags_;
    if (opt_.keep_memory) r.committed.memory = mem_.materialize();
    r.committed_instruction_count = committed_;
    r.sandbox_size = sb_.size();
    const auto fin = outside_counts();
    r.outside_evictions.resize(fin.size());
    for (std::size_t s = 0; s < fin.size(); ++s)
      r.outside_evictions[s] = static_cast<std::uint8_t>(initial_outside_[s] > fin[s] ? initial_outside_[s] - fin[s] : 0);
    r.branch_squashes = branch_squashes_;
    r.memory_order_squashes = mo_squashes_;
    for (int s = 0; s < ctx_.sets(); ++s)
      if (ctx_.occupancy(s) > ctx_.ways()) throw SimError(SimError::Kind::ContextCorrupt, "set occupancy exceeds ways");
    return r;
  }

 private:
  // ---- setup -------------------------------------------------------------

  void build() {
    std::vector<int> start(p_.blocks.size());
    int n = 0;
    for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
      start[b] = n;
      n += static_cast<int>(p_.blocks[b].body.size()) + (p_.blocks[b].term.kind == Terminator::Kind::Branch ? 2 : 1);
    }
    sis_.reserve(static_cast<std::size_t>(n));
    for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
      const BasicBlock& bb = p_.blocks[b];
      const int bi = static_cast<int>(b);
      const int len = static_cast<int>(bb.body.size());
      for (int i = 0; i < len; ++i) {
        SInst s;
        s.kind = SInst::Body;
        s.in = &bb.body[static_cast<std::size_t>(i)];
        s.pc = pc_of(bi, i);
        s.next = start[b] + i + 1;
        sis_.push_back(s);
      }
      SInst t;
      t.pc = pc_of(bi, len);
      switch (bb.term.kind) {
        case Terminator::Kind::Exit: t.kind = SInst::Exit; sis_.push_back(t); break;
        case Terminator::Kind::Jump:
          t.kind = SInst::Jmp;
          t.taken = start[static_cast<std::size_t>(bb.term.target)];
          sis_.push_back(t);
          break;
        case Terminator::Kind::Branch: {
          t.kind = SInst::Jcc;
          t.cc = bb.term.cc;
          t.taken = start[static_cast<std::size_t>(bb.term.target)];
          t.next = start[b] + len + 1;
          sis_.push_back(t);
          SInst j;
          j.kind = SInst::Jmp;
          j.pc = pc_of(bi, len + 1);
          j.taken = start[static_cast<std::size_t>(bb.term.fallthrough)];
          sis_.push_back(j);
          break;
        }
      }
    }
    fetch_si_ = start[static_cast<std::size_t>(p_.entry)];
  }

  std::vector<int> outside_counts() const {
    std::vector<int> out(static_cast<std::size_t>(ctx_.sets()), 0);
    for (int s = 0; s < ctx_.sets(); ++s)
      for (std::uint64_t l : ctx_.set_lines(s)) out[static_cast<std::size_t>(s)] += l >= sb_.size();
    return out;
  }

  // ---- helpers -----------------------------------------------------------

  void log(std::uint64_t c, LogKind k, std::uint64_t pc, std::uint64_t addr, bool spec, const char* detail = "") {
    if (opt_.record_log) log_.records.push_back(LogRecord{c, k, pc, addr, spec, detail});
  }

  Entry* find(std::uint64_t seq) {
    if (seq == 0 || rob_.empty() || seq < rob_.front().seq || seq > rob_.back().seq) return nullptr;
    auto it = std::lower_bound(rob_.begin(), rob_.end(), seq, [](const Entry& e, std::uint64_t s) { return e.seq < s; });
    return it != rob_.end() && it->seq == seq ? &*it : nullptr;
  }
  std::size_t index_of(std::uint64_t seq) const {
    auto it = std::lower_bound(rob_.begin(), rob_.end(), seq, [](const Entry& e, std::uint64_t s) { return e.seq < s; });
    return static_cast<std::size_t>(it - rob_.begin());
  }

  bool read_src(const Entry& e, int k, std::uint64_t c, std::uint64_t& v) {
    const int r = e.src_reg[static_cast<std::size_t>(k)];
    if (const Entry* q = find(e.src_prod[static_cast<std::size_t>(k)])) {
      if (q->done_cycle > c) return false;
      v = r == kFlagsReg ? q->fl : q->value;
      return true;
    }
    v = r == kFlagsReg ? encode_flags(flags_) : regs_[static_cast<std::size_t>(r)];
    return true;
  }

  bool src_tainted(const Entry& e, int k) {
    const Entry* q = find(e.src_prod[static_cast<std::size_t>(k)]);
    return q != nullptr && q->tainted;
  }

  bool any_unresolved() const {
    for (const Entry& e : rob_)
      if ((e.is(SInst::Jcc) && !e.resolved) || (e.is_store() && !e.addr_resolved)) return true;
    return false;
  }

  void rebuild_rename() {
    rename_.fill(0);
    for (const Entry& e : rob_) {
      if (e.writes_reg) rename_[e.s->in->dst.index] = e.seq;
      if (e.writes_flags) rename_[kFlagsReg] = e.seq;
    }
  }

  void add_src(Entry& e, int reg) {
    e.src_reg[static_cast<std::size_t>(e.nsrc)] = static_cast<std::uint8_t>(reg);
    e.src_prod[static_cast<std::size_t>(e.nsrc)] = rename_[static_cast<std::size_t>(reg)];
    ++e.nsrc;
  }

  static bool covers(std::uint64_t base, int width, std::uint64_t a, std::uint64_t mask) {
    return ((a - base) & mask) < static_cast<std::uint64_t>(width);
  }

  bool overlaps(const Entry& st, const Entry& ld) const {
    for (int k = 0; k < ld.width; ++k)
      if (covers(st.offset, st.width, byte_addr(ld.offset, k, mask_), mask_)) return true;
    return false;
  }

  void complete(Entry* e, std::uint64_t t) {
    if (e == nullptr) return;
    e->data_cycle = std::max(e->data_cycle, t);
    if (--e->pending == 0) e->done_cycle = e->data_cycle;
  }

  void tlb_touch(std::uint64_t c, std::uint64_t line, std::uint64_t pc, bool spec, const char* detail = "") {
    if (!ctx_.tlb_access(line / kPageSize)) log(c, LogKind::TLB_FILL, pc, line, spec, detail);
  }

  void install(std::uint64_t c, std::uint64_t line, std::uint64_t pc, bool spec, const char* detail,
               Undo* undo = nullptr) {
    const bool present = ctx_.contains(line);
    auto victim = ctx_.install(line);
    if (!present) log(c, LogKind::L1_FILL, pc, line, spec, detail);
    if (victim) log(c, LogKind::L1_EVICT, pc, *victim, spec, detail);
    if (undo != nullptr) *undo = Undo{line, victim.value_or(0), victim.has_value()};
  }

  int free_mshrs() const { return cc_.mshr_count - static_cast<int>(mshrs_.size()); }

  std::uint64_t lat_for(std::uint64_t line) const {
    return static_cast<std::uint64_t>(cc_.l2_hit(line) ? pc_.l2_hit_latency : pc_.mem_latency);
  }

  // ---- stages ------------------------------------------------------------

  bool fills(std::uint64_t c) {
    bool any = false;
    for (std::size_t k = 0; k < mshrs_.size();) {
      if (mshrs_[k].ready > c) {
        ++k;
        continue;
      }
      Mshr m = std::move(mshrs_[k]);
      mshrs_.erase(mshrs_.begin() + static_cast<std::ptrdiff_t>(k));
      any = true;
      fill(c, m);
    }
    return any;
  }

  void fill(std::uint64_t c, Mshr& m) {
    log(c, LogKind::MSHR_FREE, m.pc, m.line, m.spec);
    Entry* owner = m.owner_squashed ? nullptr : find(m.owner);
    switch (m.cls) {
      case ReqClass::Normal: install(c, m.line, m.pc, m.spec, ""); break;
      case ReqClass::Invisible:
        if (owner != nullptr) spec_buf_.push_back({m.line, m.owner});
        break;
      case ReqClass::Tracked:
        if (m.owner_squashed) {
          log(c, LogKind::CLEANUP, m.pc, m.line, true, "discard-fill");
        } else if (owner != nullptr) {
          Undo u{};
          install(c, m.line, m.pc, m.spec, "", &u);
          owner->undo.push_back(u);
        } else {
          install(c, m.line, m.pc, m.spec, "");
        }
        break;
      case ReqClass::Unsafe:
        if (m.owner_squashed) break;
        if (owner != nullptr && owner->spec) {
          owner->held.push_back(m.line);
        } else {
          tlb_touch(c, m.line, m.pc, false);
          install(c, m.line, m.pc, false, "lfb");
        }
        break;
      case ReqClass::Expose:
        tlb_touch(c, m.line, m.pc, false, "expose");
        install(c, m.line, m.pc, false, "expose");
        break;
      case ReqClass::Writeback: break;
    }
    for (std::uint64_t w : m.waiters) {
      Entry* e = find(w);
      if (e != nullptr) {
        if (e->is_load()) log(c, LogKind::EXEC, e->s->pc, m.line, e->spec);
        complete(e, c);
      }
    }
  }

  bool commit_ready(Entry& e, std::uint64_t c) {
    switch (e.s->kind) {
      case SInst::Jcc: return e.resolved;
      case SInst::Jmp:
      case SInst::Exit: return e.done_cycle <= c;
      case SInst::Body:
        if (e.is_store()) {
          std::uint64_t v;
          return e.addr_resolved && read_src(e, 1, c, v);
        }
        return e.done_cycle <= c;
    }
    return false;
  }

  bool commit(std::uint64_t c) {
    bool any = false;
    for (int n = 0; n < pc_.commit_width && !rob_.empty() && !exited_; ++n) {
      Entry& e = rob_.front();
      if (!commit_ready(e, c)) break;
      any = true;
      const SInst& s = *e.s;
      log(c, LogKind::COMMIT, s.pc, 0, false);
      switch (s.kind) {
        case SInst::Exit:
          exited_ = true;
          exit_cycle_ = c;
          break;
        case SInst::Jmp: break;
        case SInst::Jcc: {
          ++committed_jcc_;
          const std::uint64_t tgt = sis_[static_cast<std::size_t>(s.taken)].pc;
          ctx_.predictors().update(s.pc, e.actual_taken, tgt);
          break;
        }
        case SInst::Body: commit_body(e, c); break;
      }
      for (auto& r : rename_)
        if (r == e.seq) r = 0;
      ++committed_;
      rob_.pop_front();
    }
    return any;
  }

  void commit_body(Entry& e, std::uint64_t c) {
    const Instruction& in = *e.s->in;
    if (e.writes_reg) regs_[in.dst.index] = e.value;
    if (e.writes_flags) flags_ = decode_flags(e.fl);
    if (in.op == Opcode::STORE) {
      std::uint64_t v = 0;
      read_src(e, 1, c, v);
      mem_.store(e.offset, e.width, v);
      for (std::uint64_t pc : e.train_pcs) ctx_.predictors().mdp[static_cast<std::size_t>(Predictors::mdp_index(pc))] = 1;
      if (def_.id == DefenseId::INVISI || def_.id == DefenseId::LFB_DELAY) enqueue_mem(e, c, true, false);
    } else if (in.op == Opcode::LOAD) {
      if (e.invisible) {
        for (int k = 0; k < e.nlines; ++k) {
          Req r;
          r.seq = e.seq;
          r.pc = e.s->pc;
          r.line = e.lines[static_cast<std::size_t>(k)];
          r.cls = ReqClass::Expose;
          queue_.push_back(r);
        }
        std::erase_if(spec_buf_, [&](const SpecBufEntry& b) { return b.owner == e.seq; });
      }
      release_held(e, c);
    }
  }

  void release_held(Entry& e, std::uint64_t c) {
    for (std::uint64_t line : e.held) {
      tlb_touch(c, line, e.s->pc, false, "lfb");
      install(c, line, e.s->pc, false, "lfb");
    }
    e.held.clear();
  }

  bool resolve(std::uint64_t c) {
    bool any = false;
    for (std::size_t i = 0; i < rob_.size(); ++i) {
      Entry& e = rob_[i];
      if (e.is(SInst::Jcc) && e.issued && !e.resolved && e.resolve_cycle <= c) {
        any = true;
        e.resolved = true;
        e.done_cycle = c;
        const SInst& s = *e.s;
        branch_events_[e.branch_event].actual_target = sis_[static_cast<std::size_t>(e.actual_taken ? s.taken : s.next)].pc;
        log(c, LogKind::EXEC, s.pc, 0, e.spec, e.actual_taken ? "taken" : "not-taken");
        if (e.actual_taken != e.pred_taken) {
          ++branch_squashes_;
          squash_from(i + 1, c, "branch-mispredict", s.pc, e.actual_taken ? s.taken : s.next);
          return true;
        }
      } else if (e.is_store() && e.addr_ready && !e.addr_resolved && e.resolve_at <= c) {
        any = true;
        e.addr_resolved = true;
        log(c, LogKind::EXEC, e.s->pc, e.offset, e.spec, "store-address");
        if (def_.id != DefenseId::INVISI && def_.id != DefenseId::LFB_DELAY) enqueue_mem(e, c, true, e.spec);
        for (std::size_t j = i + 1; j < rob_.size(); ++j) {
          Entry& l = rob_[j];
          if (l.is_load() && l.issued && l.bypassed && overlaps(e, l)) {
            e.train_pcs.push_back(l.s->pc);
            ++mo_squashes_;
            squash_from(j, c, "memory-order", l.s->pc, l.si);
            break;
          }
        }
      }
    }
    return any;
  }

  void squash_from(std::size_t idx, std::uint64_t c, const char* cause, std::uint64_t cause_pc, int redirect) {
    log(c, LogKind::SQUASH, cause_pc, redirect >= 0 ? sis_[static_cast<std::size_t>(redirect)].pc : 0, false, cause);
    if (idx < rob_.size()) {
      const std::uint64_t first = rob_[idx].seq;
      for (std::size_t k = rob_.size(); k-- > idx;) {
        const Entry& v = rob_[k];
        if (opt_.record_log && v.issued && (v.is_load() || (v.is_store() && v.addr_ready)))
          log_.records.push_back(LogRecord{c, LogKind::SQUASH, v.s->pc, v.offset, v.spec,
                                           std::string(cause) + (v.is_load() ? " victim load" : " victim store")});
        on_squash(rob_[k], c);
      }
      std::erase_if(queue_, [&](const Req& r) { return r.seq >= first; });
      for (Mshr& m : mshrs_) {
        if (m.owner >= first && m.cls != ReqClass::Expose && m.cls != ReqClass::Writeback) m.owner_squashed = true;
        std::erase_if(m.waiters, [&](std::uint64_t w) { return w >= first; });
      }
      std::erase_if(spec_buf_, [&](const SpecBufEntry& b) { return b.owner >= first; });
      rob_.erase(rob_.begin() + static_cast<std::ptrdiff_t>(idx), rob_.end());
    }
    rebuild_rename();
    fetch_si_ = redirect;
  }

  void on_squash(Entry& e, std::uint64_t c) {
    if (def_.id != DefenseId::CLEANUP) return;
    for (auto it = e.undo.rbegin(); it != e.undo.rend(); ++it) {
      if (ctx_.remove(it->line)) log(c, LogKind::CLEANUP, e.s->pc, it->line, true, "remove");
      if (it->has_victim && !ctx_.contains(it->victim) && ctx_.insert_lru(it->victim))
        log(c, LogKind::CLEANUP, e.s->pc, it->victim, true, "restore");
    }
  }

  void update_status() {
    bool s = false;
    for (Entry& e : rob_) {
      e.spec = s;
      if ((e.is(SInst::Jcc) && !e.resolved) || (e.is_store() && !e.addr_resolved)) s = true;
    }
    if (def_.id != DefenseId::TAINT) return;
    for (Entry& e : rob_) {
      bool t = e.is_load() && e.spec;
      for (int k = 0; k < e.nsrc && !t; ++k) t = src_tainted(e, k);
      e.tainted = t;
    }
  }

  bool lfb_release(std::uint64_t c) {
    if (def_.id != DefenseId::LFB_DELAY) return false;
    bool any = false;
    for (Entry& e : rob_)
      if (!e.held.empty() && !e.spec) {
        release_held(e, c);
        any = true;
      }
    return any;
  }

  bool issue(std::uint64_t c) {
    int slots = pc_.issue_width;
    bool any = false;
    for (std::size_t i = 0; i < rob_.size() && slots > 0; ++i) {
      Entry& e = rob_[i];
      if (e.issued) continue;
      if (try_issue(i, c)) {
        --slots;
        any = true;
      }
    }
    return any;
  }

  void note_taint(Entry& e, std::uint64_t c) {
    if (!e.taint_logged) {
      e.taint_logged = true;
      log(c, LogKind::TAINT, e.s->pc, 0, e.spec, "blocked");
    }
  }

  bool try_issue(std::size_t idx, std::uint64_t c) {
    Entry& e = rob_[idx];
    const SInst& s = *e.s;
    const bool taint = def_.id == DefenseId::TAINT;
    if (s.kind == SInst::Jcc) {
      std::uint64_t f;
      if (!read_src(e, 0, c, f)) return false;
      if (taint && src_tainted(e, 0)) {
        note_taint(e, c);
        return false;
      }
      e.issued = true;
      e.actual_taken = cond_holds(s.cc, decode_flags(f));
      e.resolve_cycle = c + static_cast<std::uint64_t>(pc_.branch_resolve_latency);
      log(c, LogKind::ISSUE, s.pc, 0, e.spec);
      return true;
    }
    const Instruction& in = *s.in;
    switch (in.op) {
      case Opcode::LOAD: return issue_load(idx, c);
      case Opcode::STORE: {
        std::uint64_t a;
        if (!read_src(e, 0, c, a)) return false;
        if (taint && src_tainted(e, 0)) {
          note_taint(e, c);
          if (def_.has(TAINTED_STORE_TLB) && !e.tlb_leaked) {
            e.tlb_leaked = true;
            const std::uint64_t off = a & mask_;
            tlb_touch(c, line_of(off), s.pc, true, "tainted-store");
            if (is_split(off, in.width, mask_)) tlb_touch(c, line_of(byte_addr(off, in.width - 1, mask_)), s.pc, true, "tainted-store");
          }
          return false;
        }
        e.issued = true;
        e.addr_ready = true;
        e.offset = a & mask_;
        e.width = in.width;
        e.resolve_at = c + static_cast<std::uint64_t>(pc_.store_addr_resolve_latency);
        log(c, LogKind::ISSUE, s.pc, e.offset, e.spec, "store");
        return true;
      }
      default: break;
    }
    std::uint64_t v[3] = {0, 0, 0};
    for (int k = 0; k < e.nsrc; ++k)
      if (!read_src(e, k, c, v[k])) return false;
    e.issued = true;
    const std::uint64_t imm_or_src = in.src.is_imm ? in.src.imm : v[1];
    switch (in.op) {
      case Opcode::MOVI: e.value = in.src.imm; break;
      case Opcode::CMP: e.fl = encode_flags(flags_of(v[0] - imm_or_src)); break;
      case Opcode::CMOV: e.value = cond_holds(in.cc, decode_flags(v[2])) ? v[1] : v[0]; break;
      default:
        e.value = alu(in.op, v[0], imm_or_src);
        e.fl = encode_flags(flags_of(e.value));
        break;
    }
    e.done_cycle = c + 1;
    log(c, LogKind::ISSUE, s.pc, 0, e.spec);
    return true;
  }

  bool issue_load(std::size_t idx, std::uint64_t c) {
    Entry& e = rob_[idx];
    const Instruction& in = *e.s->in;
    std::uint64_t a;
    if (!read_src(e, 0, c, a)) return false;
    if (def_.id == DefenseId::TAINT && src_tainted(e, 0)) {
      note_taint(e, c);
      return false;
    }
    const std::uint64_t off = a & mask_;
    // Disambiguation against older in-flight stores.
    bool bypass = false;
    for (std::size_t j = 0; j < idx; ++j) {
      const Entry& st = rob_[j];
      if (!st.is_store() || st.addr_resolved) continue;
      const bool may = pc_.store_bypass &&
                       ctx_.predictors().mdp[static_cast<std::size_t>(Predictors::mdp_index(e.s->pc))] == 0;
      if (!may) return false;
      bypass = true;
    }
    std::uint64_t value = 0;
    bool all_forwarded = true;
    for (int k = 0; k < in.width; ++k) {
      const std::uint64_t ba = byte_addr(off, k, mask_);
      bool got = false;
      for (std::size_t j = idx; j-- > 0;) {
        const Entry& st = rob_[j];
        if (!st.is_store() || !st.addr_resolved || !covers(st.offset, st.width, ba, mask_)) continue;
        std::uint64_t d;
        if (!read_src(st, 1, c, d)) return false;
        value |= ((d >> (8 * ((ba - st.offset) & mask_))) & 0xff) << (8 * k);
        got = true;
        break;
      }
      if (!got) {
        all_forwarded = false;
        value |= std::uint64_t{mem_.read(ba)} << (8 * k);
      }
    }
    e.issued = true;
    e.offset = off;
    e.width = in.width;
    e.bypassed = bypass;
    e.value = value;
    log(c, LogKind::ISSUE, e.s->pc, off, e.spec, bypass ? "load bypass" : "load");
    if (all_forwarded) {
      e.done_cycle = c + 1;
      return true;
    }
    if (def_.id == DefenseId::LFB_DELAY && e.spec) {
      bool older_unsafe = false;
      for (std::size_t j = 0; j < idx && !older_unsafe; ++j) older_unsafe = rob_[j].is_load() && rob_[j].spec;
      e.lfb_unsafe = !(def_.has(FIRST_SPEC_LOAD_SAFE) && !older_unsafe);
    }
    enqueue_mem(e, c, false, e.spec);
    return true;
  }

  ReqClass class_for(const Entry& e, bool is_store, bool spec, bool split) const {
    if (!spec) return ReqClass::Normal;
    switch (def_.id) {
      case DefenseId::INVISI: return is_store ? ReqClass::Normal : ReqClass::Invisible;
      case DefenseId::CLEANUP:
        if (is_store && def_.has(SKIP_SPEC_STORE_CLEANUP)) return ReqClass::Normal;
        if (split && def_.has(SKIP_SPLIT_CLEANUP)) return ReqClass::Normal;
        return ReqClass::Tracked;
      case DefenseId::LFB_DELAY: return !is_store && e.lfb_unsafe ? ReqClass::Unsafe : ReqClass::Normal;
      default: return ReqClass::Normal;
    }
  }

  void enqueue_mem(Entry& e, std::uint64_t c, bool is_store, bool spec) {
    const std::uint64_t first = line_of(e.offset);
    const std::uint64_t last = line_of(byte_addr(e.offset, e.width - 1, mask_));
    const bool split = first != last;
    e.nlines = split ? 2 : 1;
    e.lines = {first, last};
    const ReqClass cls = class_for(e, is_store, spec, split);
    if (!is_store) {
      e.pending = e.nlines;
      e.invisible = cls == ReqClass::Invisible;
    }
    for (int k = 0; k < e.nlines; ++k) {
      Req r;
      r.seq = e.seq;
      r.pc = e.s->pc;
      r.line = e.lines[static_cast<std::size_t>(k)];
      r.cls = cls;
      r.is_store = is_store;
      r.spec = spec;
      r.split = split;
      if (split) log(c, LogKind::SPLIT_REQ, r.pc, r.line, spec, k == 0 ? "first" : "second");
      mem_events_.push_back(MemEvent{r.pc, r.line, is_store, spec});
      queue_.push_back(r);
    }
  }

  bool process_queue(std::uint64_t c) {
    bool any = false;
    while (!queue_.empty()) {
      if (!process(queue_.front(), c)) break;
      queue_.pop_front();
      any = true;
    }
    return any;
  }

  bool process(Req& r, std::uint64_t c) {
    const std::uint64_t hit_done = c + static_cast<std::uint64_t>(pc_.load_hit_latency);
    if (r.cls == ReqClass::Expose) {
      if (ctx_.contains(r.line)) {
        ctx_.touch(r.line);
        tlb_touch(c, r.line, r.pc, false, "expose");
        log(c, LogKind::EXPOSE, r.pc, r.line, false, "hit");
        return true;
      }
      const bool evicts = ctx_.lru_of_full_set(r.line).has_value();
      const int need = std::min(evicts ? 2 : 1, cc_.mshr_count);
      if (free_mshrs() < need) {
        if (!r.stalled) log(c, LogKind::EXPOSE_STALL, r.pc, r.line, false);
        r.stalled = true;
        return false;
      }
      log(c, LogKind::EXPOSE, r.pc, r.line, false, "install");
      alloc(c, Mshr{r.line, hit_done, ReqClass::Expose, r.seq, r.pc, false, false, {}});
      if (need == 2) alloc(c, Mshr{*ctx_.lru_of_full_set(r.line), hit_done, ReqClass::Writeback, r.seq, r.pc, false, false, {}});
      return true;
    }
    Entry* e = r.is_store ? nullptr : find(r.seq);
    const bool visible = r.cls == ReqClass::Normal || r.cls == ReqClass::Tracked;
    if (visible) tlb_touch(c, r.line, r.pc, r.spec);
    if (ctx_.contains(r.line)) {
      if (r.cls == ReqClass::Normal) ctx_.touch(r.line);
      log(c, LogKind::L1_HIT, r.pc, r.line, r.spec);
      if (e != nullptr) {
        log(c, LogKind::EXEC, r.pc, r.line, r.spec);
        complete(e, hit_done);
      }
      return true;
    }
    if (r.cls == ReqClass::Invisible) {
      for (const SpecBufEntry& b : spec_buf_)
        if (b.line == r.line && b.owner < r.seq) {
          log(c, LogKind::L1_HIT, r.pc, r.line, r.spec, "spec-buffer");
          complete(e, hit_done);
          return true;
        }
    }
    if (r.cls == ReqClass::Normal) {
      for (Mshr& m : mshrs_)
        if (m.cls == ReqClass::Normal && m.line == r.line) {
          log(c, LogKind::L1_MISS, r.pc, r.line, r.spec, "merged");
          if (e != nullptr) m.waiters.push_back(r.seq);
          return true;
        }
    }
    if (free_mshrs() < 1) {
      if (!r.stalled) log(c, LogKind::MSHR_STALL, r.pc, r.line, r.spec);
      r.stalled = true;
      return false;
    }
    log(c, LogKind::L1_MISS, r.pc, r.line, r.spec);
    Mshr m{r.line, c + lat_for(r.line), r.cls, r.seq, r.pc, r.spec, false, {}};
    if (e != nullptr) m.waiters.push_back(r.seq);
    alloc(c, std::move(m));
    if (r.cls == ReqClass::Invisible && def_.has(EVICT_ON_SPEC_MISS)) {
      if (auto v = ctx_.lru_of_full_set(r.line)) {
        ctx_.remove(*v);
        log(c, LogKind::L1_EVICT, r.pc, *v, true, "spec-miss");
      }
    }
    return true;
  }

  void alloc(std::uint64_t c, Mshr m) {
    log(c, LogKind::MSHR_ALLOC, m.pc, m.line, m.spec);
    mshrs_.push_back(std::move(m));
  }

  bool fetch(std::uint64_t c) {
    bool any = false;
    for (int n = 0; n < pc_.fetch_width && fetch_si_ >= 0 && static_cast<int>(rob_.size()) < pc_.rob_size; ++n) {
      any = true;
      const SInst& s = sis_[static_cast<std::size_t>(fetch_si_)];
      Entry e;
      e.seq = next_seq_++;
      e.si = fetch_si_;
      e.s = &s;
      if (opt_.record_log) log(c, LogKind::FETCH, s.pc, 0, any_unresolved());
      switch (s.kind) {
        case SInst::Exit:
          e.issued = true;
          e.done_cycle = c + 1;
          fetch_si_ = -1;
          break;
        case SInst::Jmp:
          e.issued = true;
          e.done_cycle = c + 1;
          fetch_si_ = s.taken;
          break;
        case SInst::Jcc: {
          add_src(e, kFlagsReg);
          if (pc_.oracle_branch_prediction) {
            std::size_t k = committed_jcc_;
            for (const Entry& o : rob_) k += o.is(SInst::Jcc);
            e.pred_taken = k < arch_outcomes_.size() && arch_outcomes_[k];
          } else {
            e.pred_taken = ctx_.predictors().predict_taken(s.pc);
          }
          e.branch_event = branch_events_.size();
          branch_events_.push_back(
              BranchEvent{s.pc, sis_[static_cast<std::size_t>(e.pred_taken ? s.taken : s.next)].pc, 0});
          fetch_si_ = e.pred_taken ? s.taken : s.next;
          break;
        }
        case SInst::Body: {
          const Instruction& in = *s.in;
          switch (in.op) {
            case Opcode::LOAD: add_src(e, in.addr.index); break;
            case Opcode::STORE:
              add_src(e, in.addr.index);
              add_src(e, in.src.reg.index);
              break;
            case Opcode::MOVI: break;
            case Opcode::CMOV:
              add_src(e, in.dst.index);
              add_src(e, in.src.reg.index);
              add_src(e, kFlagsReg);
              break;
            default:
              add_src(e, in.dst.index);
              if (!in.src.is_imm) add_src(e, in.src.reg.index);
              break;
          }
          e.writes_reg = in.writes_reg();
          e.writes_flags = in.writes_flags();
          if (e.writes_reg) rename_[in.dst.index] = e.seq;
          if (e.writes_flags) rename_[kFlagsReg] = e.seq;
          fetch_si_ = s.next;
          break;
        }
      }
      rob_.push_back(std::move(e));
      if (s.kind == SInst::Exit) break;
    }
    return any;
  }

  std::uint64_t next_event(std::uint64_t c) const {
    std::uint64_t t = kNever;
    auto upd = [&](std::uint64_t v) {
      if (v > c && v < t) t = v;
    };
    for (const Mshr& m : mshrs_) upd(m.ready);
    for (const Entry& e : rob_) {
      if (e.done_cycle != kNever) upd(e.done_cycle);
      if (e.is(SInst::Jcc) && e.issued && !e.resolved) upd(e.resolve_cycle);
      if (e.is_store() && e.addr_ready && !e.addr_resolved) upd(e.resolve_at);
    }
    if (exited_) upd(exit_cycle_ + static_cast<std::uint64_t>(pc_.drain_after_last_commit));
    return t;
  }

  const Program& p_;
  DefensePolicy def_;
  PipelineConfig pc_;
  CacheConfig cc_;
  SimOptions opt_;
  MicroArchContext ctx_;
  MemoryView mem_;
  SandboxConfig sb_;
  std::uint64_t mask_ = 0;

  std::vector<SInst> sis_;
  std::array<std::uint64_t, kNumRegs> regs_{};
  Flags flags_{};
  std::array<std::uint64_t, 9> rename_{};
  std::deque<Entry> rob_;
  std::deque<Req> queue_;
  std::vector<Mshr> mshrs_;
  std::vector<SpecBufEntry> spec_buf_;
  std::vector<bool> arch_outcomes_;
  std::vector<int> initial_outside_;

  int fetch_si_ = 0;
  std::uint64_t next_seq_ = 1;
  std::size_t committed_jcc_ = 0;
  std::uint64_t committed_ = 0;
  bool exited_ = false;
  std::uint64_t exit_cycle_ = 0;
  std::uint64_t branch_squashes_ = 0;
  std::uint64_t mo_squashes_ = 0;

  DebugLog log_;
  std::vector<MemEvent> mem_events_;
  std::vector<BranchEvent> branch_events_;
};

}  // namespace detail

inline RunResult run_test(const Program& p, const TestInput& in, const MicroArchContext& ctx, const DefensePolicy& def,
                          const PipelineConfig& pcfg = {}, const CacheConfig& ccfg = {}, const SimOptions& opt = {}) {
  return detail::Core(p, in, ctx, def, pcfg, ccfg, opt).run();
}

// Owns a context that carries over between runs (predictors persist; caches
// are reset per input by the caller).
class Simulator {
 public:
  Simulator(DefensePolicy def, PipelineConfig pcfg, CacheConfig ccfg)
      : def_(def), pcfg_(pcfg), ccfg_(ccfg), ctx_(ccfg) {}

  MicroArchContext& context() { return ctx_; }
  const MicroArchContext& context() const { return ctx_; }
  const DefensePolicy& defense() const { return def_; }
  const PipelineConfig& pipeline() const { return pcfg_; }
  const CacheConfig& cache() const { return ccfg_; }

  RunResult run(const Program& p, const TestInput& in, const SimOptions& opt = {}) {
    RunResult r = run_test(p, in, ctx_, def_, pcfg_, ccfg_, opt);
    ctx_ = r.final_ctx;
    return r;
  }

  RunResult run_from(const Program& p, const TestInput& in, const MicroArchContext& ctx, const SimOptions& opt = {}) const {
    return run_test(p, in, ctx, def_, pcfg_, ccfg_, opt);
  }

 private:
  DefensePolicy def_;
  PipelineConfig pcfg_;
  CacheConfig ccfg_;
  MicroArchContext ctx_;
};

}  // namespace relfuzz
