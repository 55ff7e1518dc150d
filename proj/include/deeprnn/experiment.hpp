#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "deeprnn/corpus.hpp"
#include "deeprnn/errors.hpp"

namespace deeprnn::experiment {

struct Stage {
  std::string name;
  std::string command;
  std::string args;  // unexpanded
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string group;  // consecutive stages sharing a group may run concurrently
  std::uint64_t seed_offset = 0;
};

struct Manifest {
  std::optional<std::uint64_t> seed;
  std::string output_dir = "out";
  std::string name;
  std::vector<Stage> stages;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Splits on whitespace; double quotes group words.
inline std::vector<std::string> split_args(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, have = false;
  for (char c : s) {
    if (c == '"') {
      quoted = !quoted;
      have = true;
    } else if (!quoted && (c == ' ' || c == '\t')) {
      if (have) out.push_back(cur);
      cur.clear();
      have = false;
    } else {
      cur += c;
      have = true;
    }
  }
  if (quoted) throw DataError("unbalanced quote in '" + s + "'");
  if (have) out.push_back(cur);
  return out;
}

inline std::uint64_t parse_unsigned(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(where + ": expected an unsigned integer, got '" + s + "'");
  }
  return v;
}

/// Global `key = value` lines, then `[stage NAME]` blocks of the same form.
inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  Stage* cur = nullptr;
  std::set<std::string> names;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "manifest line " + std::to_string(lineno);
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw DataError(where + ": unterminated section header");
      const auto parts = split_args(line.substr(1, line.size() - 2));
      if (parts.size() != 2 || parts[0] != "stage") throw DataError(where + ": expected '[stage NAME]'");
      const std::string& name = parts[1];
      if (!std::all_of(name.begin(), name.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
          })) {
        throw DataError(where + ": stage names use letters, digits, '_', '-' and '.'");
      }
      if (!names.insert(name).second) throw DataError(where + ": duplicate stage '" + name + "'");
      m.stages.push_back(Stage{name, "", "", {}, {}, "", 0});
      cur = &m.stages.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!cur) {
      if (key == "seed") m.seed = parse_unsigned(value, where);
      else if (key == "output_dir") m.output_dir = value;
      else if (key == "name") m.name = value;
      else throw DataError(where + ": unknown key '" + key + "'");
    } else {
      if (key == "command") cur->command = value;
      else if (key == "args") cur->args = value;
      else if (key == "inputs") cur->inputs = split_args(value);
      else if (key == "outputs") cur->outputs = split_args(value);
      else if (key == "group") cur->group = value;
      else if (key == "seed_offset") cur->seed_offset = parse_unsigned(value, where);
      else throw DataError(where + ": unknown stage key '" + key + "'");
    }
  }
  for (const auto& s : m.stages)
    if (s.command.empty()) throw DataError("stage '" + s.name + "' has no command");
  return m;
}

/// Replaces ${out}, ${dir} and ${seed}.
inline std::string expand(const std::string& s, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, 2, "${") == 0) {
      const auto close = s.find('}', i);
      if (close == std::string::npos) throw DataError("unterminated '${' in '" + s + "'");
      const std::string name = s.substr(i + 2, close - i - 2);
      auto it = vars.find(name);
      if (it == vars.end()) throw DataError("unknown variable '${" + name + "}'");
      out += it->second;
      i = close + 1;
    } else {
      out += s[i++];
    }
  }
  return out;
}

/// FNV-1a of a file, or of every file under a directory (relative names
/// included); "missing" when absent.
inline std::string hash_path(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(p)) return hex64(fnv1a(read_file(p)));
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a("dir");
    for (const auto& f : files) {
      h = fnv1a(fs::relative(f, p).generic_string(), h);
      h = fnv1a(read_file(f), h);
    }
    return hex64(h);
  }
  return "missing";
}

inline bool takes_seed(const std::string& command) { return command == "train" || command == "mix"; }

using Runner = std::function<int(const std::vector<std::string>&, std::ostream&, std::ostream&)>;

struct RunArgs {
  std::string manifest;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::uint64_t seed_fallback = 0;  // used when neither the flag nor the manifest sets a seed
};

struct StageOutcome {
  int exit = 0;
  bool skipped = false;
  double seconds = 0;
  std::vector<std::pair<std::string, std::string>> artifacts;
  std::string log;
  std::string error;
};

/// Executes the manifest's stages in order. A stage whose command, arguments
/// and input hashes match its stamp, and whose outputs are unchanged, is
/// skipped. Writes `run.log` (key=value lines) into the output directory.
inline int run_experiment(const RunArgs& args, std::ostream& out, std::ostream& err, const Runner& runner) {
  namespace fs = std::filesystem;
  const fs::path manifest_path(args.manifest);
  const Manifest m = parse_manifest(read_file(manifest_path));
  const fs::path dir = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
  const fs::path out_dir = fs::path(m.output_dir).is_absolute() ? fs::path(m.output_dir) : dir / m.output_dir;
  const std::uint64_t seed = args.seed ? *args.seed : m.seed ? *m.seed : args.seed_fallback;
  if (args.jobs == 0) throw UsageError("--jobs must be at least 1");
  fs::create_directories(out_dir / "logs");
  fs::create_directories(out_dir / ".stamps");

  const std::map<std::string, std::string> vars{
      {"out", out_dir.string()}, {"dir", dir.string()}, {"seed", std::to_string(seed)}};

  auto execute = [&](const Stage& st) {
    StageOutcome o;
    const auto start = std::chrono::steady_clock::now();
    o.log = (out_dir / "logs" / (st.name + ".log")).string();
    try {
      std::vector<std::string> argv{st.command};
      for (const auto& a : split_args(st.args)) argv.push_back(expand(a, vars));
      if (takes_seed(st.command) && std::find(argv.begin(), argv.end(), "--seed") == argv.end()) {
        argv.push_back("--seed");
        argv.push_back(std::to_string(seed + st.seed_offset));
      }
      std::vector<std::string> inputs, outputs;
      for (const auto& p : st.inputs) inputs.push_back(expand(p, vars));
      for (const auto& p : st.outputs) outputs.push_back(expand(p, vars));

      std::uint64_t h = fnv1a("stage");
      for (const auto& a : argv) h = fnv1a(a + "\x1f", h);
      for (const auto& p : inputs) h = fnv1a(p + "=" + hash_path(p) + "\x1f", h);
      const std::string stamp = hex64(h);
      const fs::path stamp_path = out_dir / ".stamps" / (st.name + ".stamp");

      if (!args.force && fs::exists(stamp_path)) {
        std::istringstream recorded(read_file(stamp_path));
        std::string first;
        std::getline(recorded, first);
        bool fresh = first == "stamp=" + stamp;
        std::string line;
        while (fresh && std::getline(recorded, line)) {
          const auto tab = line.rfind('\t');
          fresh = tab != std::string::npos && hash_path(line.substr(0, tab)) == line.substr(tab + 1);
        }
        if (fresh) {
          o.skipped = true;
          for (const auto& p : outputs) o.artifacts.emplace_back(p, hash_path(p));
        }
      }
      if (!o.skipped) {
        std::ofstream log(o.log, std::ios::binary);
        o.exit = runner(argv, log, log);
        log.flush();
        if (o.exit == 0) {
          std::string record = "stamp=" + stamp + "\n";
          for (const auto& p : outputs) {
            o.artifacts.emplace_back(p, hash_path(p));
            if (o.artifacts.back().second == "missing") {
              o.exit = 3;
              o.error = "declared output '" + p + "' was not produced";
            }
            record += p + "\t" + o.artifacts.back().second + "\n";
          }
          if (o.exit == 0) {
            std::ofstream sf(stamp_path, std::ios::binary);
            sf << record;
          }
        } else {
          fs::remove(stamp_path);
        }
      }
    } catch (const UsageError& e) {
      o.exit = 1;
      o.error = e.what();
    } catch (const DataError& e) {
      o.exit = 2;
      o.error = e.what();
    } catch (const std::exception& e) {
      o.exit = 3;
      o.error = e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return o;
  };

  std::vector<std::string> run_log;
  auto report = [&](const Stage& st, const StageOutcome& o) {
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.3f", o.seconds);
    std::string line = "stage=" + st.name + " command=" + st.command +
                       " status=" + (o.skipped ? "skipped" : o.exit == 0 ? "done" : "failed") +
                       " exit=" + std::to_string(o.exit) + " wall_seconds=" + secs;
    if (o.exit != 0) line += " log=" + o.log;
    run_log.push_back(line);
    out << line << "\n";
    for (const auto& [path, hash] : o.artifacts) {
      const std::string a = "stage=" + st.name + " artifact=" + path + " fnv1a=" + hash;
      run_log.push_back(a);
      out << a << "\n";
    }
  };

  int status = 0;
  std::size_t i = 0;
  while (i < m.stages.size() && status == 0) {
    std::size_t j = i + 1;
    if (!m.stages[i].group.empty()) {
      while (j < m.stages.size() && m.stages[j].group == m.stages[i].group) ++j;
    }
    std::vector<StageOutcome> outcomes(j - i);
    if (j - i == 1 || args.jobs == 1) {
      for (std::size_t k = i; k < j; ++k) {
        outcomes[k - i] = execute(m.stages[k]);
        if (outcomes[k - i].exit != 0) {
          outcomes.resize(k - i + 1);
          break;
        }
      }
    } else {
      std::atomic<std::size_t> next{i};
      std::vector<std::thread> workers;
      for (std::size_t w = 0; w < std::min(args.jobs, j - i); ++w) {
        workers.emplace_back([&] {
          for (std::size_t k = next++; k < j; k = next++) outcomes[k - i] = execute(m.stages[k]);
        });
      }
      for (auto& t : workers) t.join();
    }
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
      const Stage& st = m.stages[i + k];
      report(st, outcomes[k]);
      if (outcomes[k].exit != 0 && status == 0) {
        status = outcomes[k].exit;
        err << "stage '" << st.name << "' failed with exit " << outcomes[k].exit;
        if (!outcomes[k].error.empty()) err << ": " << outcomes[k].error;
        err << "; see " << outcomes[k].log << "\n";
      }
    }
    i = j;
  }
  write_lines(out_dir / "run.log", run_log);
  return status;
}

}  // namespace deeprnn::experiment
