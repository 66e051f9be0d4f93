// bpfstore: client and offline toolchain.
//
//   bpfstore asm prog.s -o prog.bin
//   bpfstore disasm prog.bin
//   bpfstore verify prog.bin
//   bpfstore register prog.bin --server host:port
//   bpfstore call 0x8001 --from 4096 --payload-hex 0f0000006b --server host:port
//   bpfstore bench

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "bpfstore/bpfstore.hpp"

using namespace bpfstore;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr std::size_t kMaxHexPayload = 4096;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path + ": " + std::strerror(errno));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path + ": " + std::strerror(errno));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string to_hex(std::span<const uint8_t> bytes) {
  std::string out;
  out.reserve(2 * bytes.size());
  for (uint8_t b : bytes) out += fmt::format("{:02x}", b);
  return out;
}

std::vector<uint8_t> from_hex(std::string text) {
  std::erase_if(text, [](char c) { return c == ' ' || c == ':' || c == '_'; });
  if (text.starts_with("0x") || text.starts_with("0X")) text.erase(0, 2);
  if (text.size() % 2) throw UsageError("hex payload has an odd number of digits");
  if (text.size() / 2 > kMaxHexPayload) throw UsageError("hex payload over 4 KiB; use --payload-file");
  std::vector<uint8_t> out;
  for (std::size_t i = 0; i < text.size(); i += 2) {
    auto nibble = [&](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      throw UsageError(std::string("bad hex digit '") + c + "'");
    };
    out.push_back(static_cast<uint8_t>(nibble(text[i]) << 4 | nibble(text[i + 1])));
  }
  return out;
}

// A .s file is assembled, anything else is taken as bytecode.
Program load_program(const std::string& path) {
  const auto bytes = read_file(path);
  if (path.ends_with(".s")) return assemble(std::string(bytes.begin(), bytes.end()));
  return decode_program(bytes);
}

struct PayloadArgs {
  std::string hex;
  std::string file;

  std::vector<uint8_t> get() const {
    if (!hex.empty() && !file.empty()) throw UsageError("give either --payload-hex or --payload-file");
    if (!file.empty()) return read_file(file);
    return from_hex(hex);
  }
};

uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  uint64_t v = 0;
  try {
    v = std::stoull(s, &used, 0);
  } catch (const std::exception&) {
    throw UsageError("not a number: " + s);
  }
  if (used != s.size()) throw UsageError("not a number: " + s);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bpfstore: appcode client and toolchain"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  std::string server = "127.0.0.1:10809";
  auto add_server = [&](CLI::App* sub) { sub->add_option("--server", server, "host:port")->capture_default_str(); };

  // asm
  auto* asm_cmd = app.add_subcommand("asm", "assemble a listing into bytecode");
  std::string asm_in, asm_out;
  asm_cmd->add_option("input", asm_in, "assembly listing")->required();
  asm_cmd->add_option("-o,--output", asm_out, "bytecode output (default: input with .bin)");

  // disasm
  auto* disasm_cmd = app.add_subcommand("disasm", "print the listing of a bytecode file");
  std::string disasm_in;
  disasm_cmd->add_option("input", disasm_in, "bytecode file")->required();

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the verifier locally");
  std::string verify_in;
  std::size_t max_insns = VerifyLimits{}.max_insns, max_path = VerifyLimits{}.max_path;
  verify_cmd->add_option("input", verify_in, "bytecode or .s listing")->required();
  verify_cmd->add_option("--max-insns", max_insns)->capture_default_str();
  verify_cmd->add_option("--max-path", max_path)->capture_default_str();

  // read
  auto* read_cmd = app.add_subcommand("read", "read device bytes");
  std::string read_from;
  uint32_t read_len = 0;
  std::string read_out;
  read_cmd->add_option("--from", read_from, "device offset")->required();
  read_cmd->add_option("--len", read_len, "byte count")->required();
  read_cmd->add_option("-o,--output", read_out, "write bytes to a file instead of hex to stdout");
  add_server(read_cmd);

  // write
  auto* write_cmd = app.add_subcommand("write", "write device bytes");
  std::string write_from;
  PayloadArgs write_data;
  write_cmd->add_option("--from", write_from, "device offset")->required();
  write_cmd->add_option("--payload-hex", write_data.hex, "bytes as hex (up to 4 KiB)");
  write_cmd->add_option("--payload-file", write_data.file, "bytes from a file");
  add_server(write_cmd);

  // register
  auto* reg_cmd = app.add_subcommand("register", "verify and install an appcode on the server");
  std::string reg_in;
  reg_cmd->add_option("input", reg_in, "bytecode or .s listing")->required();
  add_server(reg_cmd);

  // call
  auto* call_cmd = app.add_subcommand("call", "invoke a registered appcode");
  std::string call_type, call_from = "0";
  PayloadArgs call_data;
  call_cmd->add_option("type", call_type, "wire type returned by register")->required();
  call_cmd->add_option("--from", call_from, "request from field")->capture_default_str();
  call_cmd->add_option("--payload-hex", call_data.hex, "payload as hex (up to 4 KiB)");
  call_cmd->add_option("--payload-file", call_data.file, "payload from a file");
  add_server(call_cmd);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "remote vs offloaded latency");
  LocalBenchConfig bench;
  int64_t net_us = bench.net_delay.count(), read_us = bench.read_delay.count(), write_us = bench.write_delay.count();
  std::string csv_out;
  bool bench_remote = false;
  bench_cmd->add_option("--iterations", bench.iterations)->capture_default_str();
  bench_cmd->add_option("--elems", bench.search_elems, "binary search array length")->capture_default_str();
  bench_cmd->add_option("--net-delay-us", net_us, "one-way delay of the in-process server")->capture_default_str();
  bench_cmd->add_option("--read-delay-us", read_us)->capture_default_str();
  bench_cmd->add_option("--write-delay-us", write_us)->capture_default_str();
  bench_cmd->add_option("--csv", csv_out, "also write the CSV to a file");
  bench_cmd->add_flag("--remote", bench_remote,
                      "use --server instead of an in-process server; delays describe its configuration");
  add_server(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*asm_cmd) {
      const auto text = read_file(asm_in);
      Program p;
      try {
        p = assemble(std::string(text.begin(), text.end()));
      } catch (const AsmError& e) {
        std::cerr << asm_in << ":" << e.line() << ": " << e.what() << "\n";
        return kExitFailure;
      }
      if (asm_out.empty()) asm_out = (asm_in.ends_with(".s") ? asm_in.substr(0, asm_in.size() - 2) : asm_in) + ".bin";
      write_file(asm_out, encode_program(p));
    } else if (*disasm_cmd) {
      std::cout << disassemble(decode_program(read_file(disasm_in))) << "\n";
    } else if (*verify_cmd) {
      const Program p = load_program(verify_in);
      try {
        const VerifiedProgram vp = verify(p, {max_insns, max_path, VerifyLimits{}.max_states});
        std::cout << "ok: " << p.size() << " slots, longest path " << vp.max_path_len() << "\n";
      } catch (const VerifyError& e) {
        std::cerr << verify_in << ": " << explain(e) << "\n";
        return kExitFailure;
      }
    } else if (*read_cmd) {
      Session s = Session::connect(server);
      const auto bytes = s.read(parse_u64(read_from), read_len);
      if (read_out.empty()) std::cout << to_hex(bytes) << "\n";
      else write_file(read_out, bytes);
    } else if (*write_cmd) {
      const auto bytes = write_data.get();
      Session s = Session::connect(server);
      s.write(parse_u64(write_from), bytes);
    } else if (*reg_cmd) {
      const Program p = load_program(reg_in);
      Session s = Session::connect(server);
      std::cout << fmt::format("{:#x}", s.register_appcode(p)) << "\n";
    } else if (*call_cmd) {
      const uint64_t type = parse_u64(call_type);
      if (type > UINT32_MAX || !proto::is_appcode_type(static_cast<uint32_t>(type))) {
        throw UsageError(fmt::format("type {} is outside [{:#x}, {:#x})", call_type, proto::kAcBase, proto::kAcMax));
      }
      const auto payload = call_data.get();
      Session s = Session::connect(server);
      const CallResult r = s.call(static_cast<uint32_t>(type), parse_u64(call_from), payload);
      std::cout << "status " << r.status << "\n" << "payload " << to_hex(r.payload) << "\n";
      if (r.status != 0) {
        std::cerr << "appcode returned " << r.status << " (" << std::strerror(static_cast<int>(r.status)) << ")\n";
        return kExitFailure;
      }
    } else if (*bench_cmd) {
      bench.net_delay = std::chrono::microseconds(net_us);
      bench.read_delay = std::chrono::microseconds(read_us);
      bench.write_delay = std::chrono::microseconds(write_us);
      std::vector<BenchRow> rows;
      if (bench_remote) {
        Session s = Session::connect(server);
        rows = run_suite(s, model_params(bench), bench.search_elems, bench.iterations);
      } else {
        rows = run_local_suite(bench);
      }
      std::cout << format_table(rows) << "\n" << format_csv(rows);
      if (!csv_out.empty()) {
        const std::string csv = format_csv(rows);
        write_file(csv_out, std::span(reinterpret_cast<const uint8_t*>(csv.data()), csv.size()));
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ServerError& e) {
    std::cerr << "server error " << e.code() << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
