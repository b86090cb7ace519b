#pragma once

#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyavsr/config.hpp"
#include "polyavsr/corpus.hpp"

namespace polyavsr {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CommandKind { corpus_gen, train, eval, decode, inspect };

struct Command {
  CommandKind kind = CommandKind::inspect;
  CorpusConfig corpus;      // corpus-gen
  RunConfig run;            // train, eval, decode
  std::string out;          // corpus-gen dir, eval report prefix, decode JSONL path
  std::string checkpoint;   // eval, decode, inspect
  std::string split = "test";
  std::optional<double> noise_snr_db;
  std::size_t threads = 1;  // POLYAVSR_THREADS
  bool help = false;
  std::string help_text;
};

// args excludes the program name. Values from --config are applied first;
// explicit flags override them. Throws UsageError naming the offending flag.
Command parse_command(const std::vector<std::string>& args);

int run_command(const Command& cmd, std::ostream& out, std::ostream& err);

// Entry point used by the executable; returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace polyavsr
