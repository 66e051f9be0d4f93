#pragma once

// Random appcode generator for verifier and VM property tests. Programs are
// built from snippets that usually, but not always, satisfy the verifier:
// near-boundary offsets, missing checks and clobbered pointers make a good
// share of them fail.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gen {

struct Options {
  bool helpers = true;
  int min_snippets = 3;
  int max_snippets = 24;
};

class ProgramGen {
 public:
  ProgramGen(std::mt19937_64& rng, Options opts) : rng_(rng), opts_(opts) {}

  std::string source() {
    text_.clear();
    const int n = uniform(opts_.min_snippets, opts_.max_snippets);
    snippets_ = n;
    line("mov64 r6, r1");
    line("ldxdw r2, [r6+16]");
    line("ldxdw r3, [r6+24]");
    for (int r : kScalars) {
      if (chance(0.97)) line("mov64 r" + std::to_string(r) + ", " + imm32());
    }
    for (int i = 0; i < n; ++i) {
      cur_ = i;
      text_ += "L" + std::to_string(i) + ":\n";
      snippet();
    }
    text_ += "L" + std::to_string(n) + ":\n";
    if (chance(0.5)) line("mov64 r0, r" + std::to_string(scalar()));
    line("exit");
    return text_;
  }

 private:
  static constexpr int kScalars[] = {0, 4, 5, 7, 8, 9};

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }

  void line(const std::string& s) { text_ += "    " + s + "\n"; }

  int scalar() {
    if (chance(0.03)) return uniform(0, 10);
    return kScalars[uniform(0, 5)];
  }

  std::string reg(int r) { return "r" + std::to_string(r); }

  std::string forward() { return "L" + std::to_string(uniform(cur_ + 1, snippets_)); }

  std::string imm32() {
    static const int64_t special[] = {0, 1, -1, 2, 3, 7, 8, 31, 32, 63, 64, 255, 4096, 0x7fffffff, -0x7fffffff - 1};
    if (chance(0.6)) return std::to_string(special[uniform(0, 14)]);
    return std::to_string(static_cast<int32_t>(rng_()));
  }

  std::string size_suffix() {
    static const char* s[] = {"b", "h", "w", "dw"};
    return s[uniform(0, 3)];
  }

  std::string off(int lo, int hi) {
    const int v = uniform(lo, hi);
    return v < 0 ? std::to_string(v) : "+" + std::to_string(v);
  }

  void snippet() {
    const int total = opts_.helpers ? 20 : 18;
    switch (uniform(0, total - 1)) {
      case 0:
      case 1: {
        static const char* ops[] = {"add64", "sub64", "mul64", "div64", "or64",  "and64", "lsh64",
                                    "rsh64", "mod64", "xor64", "mov64", "arsh64"};
        line(std::string(ops[uniform(0, 11)]) + " " + reg(scalar()) + ", " + imm32());
        break;
      }
      case 2:
      case 3: {
        static const char* ops[] = {"add64", "sub64", "mul64", "div64", "or64",  "and64", "lsh64",
                                    "rsh64", "mod64", "xor64", "mov64", "arsh64"};
        line(std::string(ops[uniform(0, 11)]) + " " + reg(scalar()) + ", " + reg(scalar()));
        break;
      }
      case 4:
        if (chance(0.5)) {
          line("neg64 " + reg(scalar()));
        } else {
          line("lddw " + reg(scalar()) + ", " + std::to_string(rng_()));
        }
        break;
      case 5:
        line("ldxdw r2, [r6+16]");
        line("ldxdw r3, [r6+24]");
        break;
      case 6:
      case 7:
      case 9:
      case 10: {
        // guarded block: bounds check, then accesses the check may or may not cover
        const std::string t = chance(0.5) ? "r4" : "r5";
        const std::string end = chance(0.85) ? "G" + std::to_string(guard_++) : forward();
        const int k = uniform(0, 64);
        line("mov64 " + t + ", r2");
        line("add64 " + t + ", " + std::to_string(k));
        switch (uniform(0, 4)) {
          case 0: line("jgt " + t + ", r3, " + end); break;
          case 1: line("jlt r3, " + t + ", " + end); break;
          case 2:
            line("jle " + t + ", r3, +1");
            line("ja " + end);
            break;
          case 3:
            line("jge r3, " + t + ", +1");
            line("ja " + end);
            break;
          case 4: line("jge " + t + ", r3, " + end); break;
        }
        const int accesses = uniform(1, 4);
        for (int i = 0; i < accesses; ++i) guarded_access(k);
        if (end[0] == 'G') text_ += end + ":\n";
        break;
      }
      case 8:
        if (chance(0.5)) {
          line("ldx" + size_suffix() + " " + reg(scalar()) + ", [" + (chance(0.8) ? "r2" : "r4") + off(-2, 70) + "]");
        } else if (chance(0.5)) {
          line("st" + size_suffix() + " [r2" + off(-2, 70) + "], " + imm32());
        } else {
          line("stx" + size_suffix() + " [r2" + off(-2, 70) + "], " + reg(scalar()));
        }
        break;
      case 11: {
        static const int masks[] = {1, 3, 7, 15, 31, 63};
        const int s = scalar();
        if (chance(0.7)) {
          line("mov64 r5, " + reg(s));
          line("and64 r5, " + std::to_string(masks[uniform(0, 5)]));
        } else {
          line("jgt " + reg(s) + ", " + std::to_string(uniform(0, 48)) + ", " + forward());
          line("mov64 r5, " + reg(s));
        }
        line("add64 r5, r2");
        if (chance(0.5)) {
          line("ldx" + size_suffix() + " " + reg(scalar()) + ", [r5" + off(-2, 40) + "]");
        } else {
          line("stx" + size_suffix() + " [r5" + off(-2, 40) + "], " + reg(scalar()));
        }
        break;
      }
      case 12:
        if (chance(0.5)) {
          line("stx" + size_suffix() + " [r10-" + std::to_string(uniform(1, 520)) + "], " + reg(scalar()));
        } else {
          line("st" + size_suffix() + " [r10-" + std::to_string(uniform(1, 520)) + "], " + imm32());
        }
        break;
      case 13: {
        // store then maybe reload; reloads elsewhere may read uninit bytes
        const int o = uniform(1, 64) * 8;
        line("stxdw [r10-" + std::to_string(o) + "], " + reg(scalar()));
        line("ldx" + size_suffix() + " " + reg(scalar()) + ", [r10-" + std::to_string(o - uniform(0, 8)) + "]");
        break;
      }
      case 14:
        line("ldx" + size_suffix() + " " + reg(scalar()) + ", [r10-" + std::to_string(uniform(1, 520)) + "]");
        break;
      case 15: {
        static const int offs[] = {0, 4, 8, 12, 16, 24};
        const int o = chance(0.8) ? offs[uniform(0, 5)] : uniform(0, 40);
        line("ldx" + size_suffix() + " " + reg(scalar()) + ", [r6+" + std::to_string(o) + "]");
        break;
      }
      case 16: {
        static const char* cc[] = {"jeq", "jne", "jgt", "jge", "jlt", "jle", "jsgt", "jsge", "jslt", "jsle"};
        const std::string rhs = chance(0.5) ? imm32() : reg(scalar());
        line(std::string(cc[uniform(0, 9)]) + " " + reg(scalar()) + ", " + rhs + ", " + forward());
        break;
      }
      case 17:
        if (chance(0.5)) {
          line("ja " + forward());
        } else {
          line("mov64 r0, " + imm32());
          line("exit");
        }
        break;
      default: {
        auto arg = [&](int r, int hi) {
          if (chance(0.8)) {
            line("mov64 r" + std::to_string(r) + ", " + std::to_string(uniform(0, hi)));
          } else {
            line("mov64 r" + std::to_string(r) + ", " + reg(kScalars[uniform(0, 5)]));
          }
        };
        switch (uniform(0, 4)) {
          case 0:
            arg(1, 160);
            line("call data_realloc");
            break;
          case 1:
          case 2:
            arg(1, 4200);
            arg(2, 96);
            arg(3, 96);
            line(chance(0.5) ? "call io_read" : "call io_write");
            break;
          case 3:
            arg(1, 96);
            arg(2, 96);
            line("call reply_set");
            break;
          case 4:
            line("call " + std::to_string(uniform(0, 9)));
            break;
        }
        break;
      }
    }
  }

  void guarded_access(int k) {
    const int w = uniform(0, 3);
    const std::string sz = std::string(1, "bhwd"[w]) + (w == 3 ? "w" : "");
    const int hi = k - (1 << w) + (chance(0.1) ? uniform(1, 4) : 0);
    const std::string at = "[r2" + off(chance(0.05) ? -1 : 0, std::max(hi, 0)) + "]";
    switch (uniform(0, 3)) {
      case 0:
      case 1: line("ldx" + sz + " " + reg(scalar()) + ", " + at); break;
      case 2: line("st" + sz + " " + at + ", " + imm32()); break;
      case 3: {
        static const int masks[] = {1, 3, 7, 15, 31};
        if (chance(0.5)) {
          line("stx" + sz + " " + at + ", " + reg(scalar()));
          break;
        }
        line("mov64 r5, " + reg(scalar()));
        line("and64 r5, " + std::to_string(masks[uniform(0, 4)]));
        line("add64 r5, r2");
        line("ldx" + sz + " " + reg(kScalars[uniform(0, 3)]) + ", [r5" + off(0, 8) + "]");
        break;
      }
    }
  }

  std::mt19937_64& rng_;
  Options opts_;
  int guard_ = 0;
  std::string text_;
  int snippets_ = 0;
  int cur_ = 0;
};

inline std::string random_source(std::mt19937_64& rng, Options opts = {}) { return ProgramGen(rng, opts).source(); }

}  // namespace gen
