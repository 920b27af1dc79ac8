#pragma once

// Textual assembly for Program. Grammar is documented in docs/asm_grammar.md.

#include <cctype>
#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "relfuzz/isa.hpp"

namespace relfuzz {

class AsmError : public std::runtime_error {
 public:
  enum class Kind { Syntax, Semantic };
  AsmError(Kind kind, int line, const std::string& msg)
      : std::runtime_error(std::string(kind == Kind::Syntax ? "syntax error" : "semantic error") +
                           " at line " + std::to_string(line) + ": " + msg),
        kind_(kind),
        line_(line),
        detail_(msg) {}
  Kind kind() const { return kind_; }
  int line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  Kind kind_;
  int line_;
  std::string detail_;
};

namespace detail {

inline std::string render_imm(std::uint64_t v) {
  if (v <= 9) return std::to_string(v);
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

inline std::string reg_name(Reg r) { return "R" + std::to_string(r.index); }

inline std::string render_src(const Src& s) { return s.is_imm ? render_imm(s.imm) : reg_name(s.reg); }

inline std::string label(int b) { return ".bb" + std::to_string(b); }

}  // namespace detail

inline std::string render_instruction(const Instruction& in) {
  using detail::reg_name;
  std::string w = std::to_string(in.width);
  switch (in.op) {
    case Opcode::CMOV:
      return std::string("CMOV") + cond_name(in.cc) + " " + reg_name(in.dst) + ", " +
             detail::render_src(in.src);
    case Opcode::LOAD:
      return "LOAD." + w + " " + reg_name(in.dst) + ", [SB + " + reg_name(in.addr) + "]";
    case Opcode::STORE:
      return "STORE." + w + " [SB + " + reg_name(in.addr) + "], " + detail::render_src(in.src);
    default:
      return std::string(opcode_name(in.op)) + " " + reg_name(in.dst) + ", " +
             detail::render_src(in.src);
  }
}

inline std::string render_asm(const Program& p) {
  std::string out;
  for (const BasicBlock& bb : p.blocks) {
    out += detail::label(bb.id) + ":\n";
    for (const Instruction& in : bb.body) out += render_instruction(in) + "\n";
    switch (bb.term.kind) {
      case Terminator::Kind::Exit: out += "EXIT\n"; break;
      case Terminator::Kind::Jump: out += "JMP " + detail::label(bb.term.target) + "\n"; break;
      case Terminator::Kind::Branch:
        out += std::string("J") + cond_name(bb.term.cc) + " " + detail::label(bb.term.target) + "\n";
        out += "JMP " + detail::label(bb.term.fallthrough) + "\n";
        break;
    }
  }
  if (!out.empty()) out.pop_back();
  return out;
}

namespace detail {

struct Line {
  int number;
  std::vector<std::string> tokens;
};

// Splits on whitespace and commas; brackets and '+' become their own tokens.
inline std::vector<std::string> tokenize(std::string_view s, int line_no) {
  std::vector<std::string> toks;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) toks.push_back(std::move(cur)), cur.clear();
  };
  for (char c : s) {
    if (c == '#') break;
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      flush();
    } else if (c == '[' || c == ']' || c == '+' || c == ':') {
      flush();
      toks.emplace_back(1, c);
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') {
      cur += c;
    } else {
      throw AsmError(AsmError::Kind::Syntax, line_no, "unexpected character");
    }
  }
  flush();
  return toks;
}

inline std::optional<Cond> parse_cond(std::string_view s) {
  static const std::pair<const char*, Cond> table[] = {{"Z", Cond::Z},   {"NZ", Cond::NZ},
                                                       {"L", Cond::L},   {"GE", Cond::GE},
                                                       {"S", Cond::S},   {"NS", Cond::NS}};
  for (const auto& [name, cc] : table)
    if (s == name) return cc;
  return std::nullopt;
}

inline bool looks_like_reg(std::string_view s) {
  return s.size() >= 2 && s[0] == 'R' && std::isdigit(static_cast<unsigned char>(s[1]));
}

inline Reg parse_reg(const std::string& s, int line) {
  if (!looks_like_reg(s)) throw AsmError(AsmError::Kind::Syntax, line, "expected register, got '" + s + "'");
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw AsmError(AsmError::Kind::Syntax, line, "malformed register '" + s + "'");
  if (v < 0 || v >= kNumRegs) throw AsmError(AsmError::Kind::Semantic, line, "bad register '" + s + "'");
  return Reg{static_cast<std::uint8_t>(v)};
}

inline std::uint64_t parse_imm(const std::string& s, int line) {
  std::string_view v = s;
  bool neg = false;
  if (!v.empty() && v[0] == '-') neg = true, v.remove_prefix(1);
  int base = 10;
  if (v.size() > 2 && v[0] == '0' && (v[1] == 'x' || v[1] == 'X')) base = 16, v.remove_prefix(2);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out, base);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size())
    throw AsmError(AsmError::Kind::Syntax, line, "expected immediate, got '" + s + "'");
  return neg ? ~out + 1 : out;
}

inline Src parse_src(const std::string& s, int line) {
  if (looks_like_reg(s)) return Src{false, parse_reg(s, line), 0};
  return Src::i(parse_imm(s, line));
}

// Parses "[ SB + Rk ]" starting at tokens[pos]; returns the register.
inline Reg parse_mem(const std::vector<std::string>& t, std::size_t pos, int line) {
  if (t.size() < pos + 5 || t[pos] != "[" || t[pos + 1] != "SB" || t[pos + 2] != "+" ||
      t[pos + 4] != "]")
    throw AsmError(AsmError::Kind::Syntax, line, "expected memory operand [SB + Rk]");
  return parse_reg(t[pos + 3], line);
}

inline void expect_count(const Line& l, std::size_t n) {
  if (l.tokens.size() != n) throw AsmError(AsmError::Kind::Syntax, l.number, "wrong operand count");
}

}  // namespace detail

inline Program parse_asm(std::string_view text) {
  using namespace detail;
  std::vector<Line> lines;
  {
    int no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      ++no;
      auto toks = tokenize(text.substr(start, end - start), no);
      if (!toks.empty()) lines.push_back({no, std::move(toks)});
      start = end + 1;
    }
  }
  if (lines.empty()) throw AsmError(AsmError::Kind::Syntax, 1, "empty program");

  // Pass 1: labels.
  std::map<std::string, int> labels;
  for (const Line& l : lines) {
    if (l.tokens.size() == 2 && l.tokens[1] == ":") {
      const std::string& name = l.tokens[0];
      if (name.size() < 2 || name[0] != '.')
        throw AsmError(AsmError::Kind::Syntax, l.number, "labels start with '.'");
      if (labels.count(name)) throw AsmError(AsmError::Kind::Semantic, l.number, "duplicate label " + name);
      const int id = static_cast<int>(labels.size());
      labels[name] = id;
    }
  }
  auto target = [&](const std::string& name, int line) {
    auto it = labels.find(name);
    if (it == labels.end()) throw AsmError(AsmError::Kind::Semantic, line, "unknown label " + name);
    return it->second;
  };

  Program p;
  BasicBlock* cur = nullptr;
  bool terminated = true;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const Line& l = lines[li];
    const auto& t = l.tokens;
    if (t.size() == 2 && t[1] == ":") {
      if (!terminated) throw AsmError(AsmError::Kind::Syntax, l.number, "block without terminator");
      p.blocks.push_back(BasicBlock{static_cast<int>(p.blocks.size()), {}, {}});
      cur = &p.blocks.back();
      terminated = false;
      continue;
    }
    if ((t[0] == "JMP" || (t[0].size() > 1 && t[0][0] == 'J' && parse_cond(t[0].substr(1)))) &&
        t.size() == 2)
      target(t[1], l.number);
    if (cur == nullptr) throw AsmError(AsmError::Kind::Syntax, l.number, "instruction outside a block");
    if (terminated) throw AsmError(AsmError::Kind::Syntax, l.number, "instruction after terminator");
    const std::string& m = t[0];
    Instruction in;
    if (m == "EXIT") {
      expect_count(l, 1);
      cur->term = Terminator{Terminator::Kind::Exit, Cond::Z, -1, -1};
      terminated = true;
    } else if (m == "JMP") {
      expect_count(l, 2);
      cur->term = Terminator{Terminator::Kind::Jump, Cond::Z, target(t[1], l.number), -1};
      terminated = true;
    } else if (m.size() > 1 && m[0] == 'J' && parse_cond(m.substr(1))) {
      expect_count(l, 2);
      if (li + 1 >= lines.size() || lines[li + 1].tokens.size() != 2 || lines[li + 1].tokens[0] != "JMP")
        throw AsmError(AsmError::Kind::Syntax, l.number, "conditional jump must be followed by JMP");
      const Line& next = lines[++li];
      cur->term = Terminator{Terminator::Kind::Branch, *parse_cond(m.substr(1)), target(t[1], l.number),
                             target(next.tokens[1], next.number)};
      terminated = true;
    } else if (m == "ADD" || m == "SUB" || m == "AND" || m == "OR" || m == "XOR" || m == "CMP" ||
               m == "MOVI") {
      expect_count(l, 3);
      static const std::map<std::string, Opcode> ops = {
          {"ADD", Opcode::ADD}, {"SUB", Opcode::SUB}, {"AND", Opcode::AND}, {"OR", Opcode::OR},
          {"XOR", Opcode::XOR}, {"CMP", Opcode::CMP}, {"MOVI", Opcode::MOVI}};
      in.op = ops.at(m);
      in.dst = parse_reg(t[1], l.number);
      in.src = in.op == Opcode::MOVI ? Src::i(parse_imm(t[2], l.number)) : parse_src(t[2], l.number);
      cur->body.push_back(in);
    } else if (m.rfind("CMOV", 0) == 0 && parse_cond(m.substr(4))) {
      expect_count(l, 3);
      in.op = Opcode::CMOV;
      in.cc = *parse_cond(m.substr(4));
      in.dst = parse_reg(t[1], l.number);
      in.src = Src{false, parse_reg(t[2], l.number), 0};
      cur->body.push_back(in);
    } else if (m.rfind("LOAD.", 0) == 0 || m.rfind("STORE.", 0) == 0) {
      const bool load = m[0] == 'L';
      in.op = load ? Opcode::LOAD : Opcode::STORE;
      std::uint64_t w = parse_imm(m.substr(load ? 5 : 6), l.number);
      if (w != 1 && w != 2 && w != 4 && w != 8)
        throw AsmError(AsmError::Kind::Semantic, l.number, "bad access width");
      in.width = static_cast<std::uint8_t>(w);
      expect_count(l, 7);
      if (load) {
        in.dst = parse_reg(t[1], l.number);
        in.addr = parse_mem(t, 2, l.number);
      } else {
        in.addr = parse_mem(t, 1, l.number);
        in.src = Src{false, parse_reg(t[6], l.number), 0};
      }
      cur->body.push_back(in);
    } else {
      throw AsmError(AsmError::Kind::Syntax, l.number, "unknown mnemonic '" + m + "'");
    }
  }
  if (!terminated) throw AsmError(AsmError::Kind::Syntax, lines.back().number, "block without terminator");
  return p;
}

}  // namespace relfuzz
