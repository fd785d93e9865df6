#pragma once

#include <memory>

#include "CLI11.hpp"

namespace dne::cli {

enum ExitCode : int {
  kOk = 0,
  kError = 1,
  kBudgetExhausted = 2,  ///< training ran out of generations below r_max
};

/// Owns the option storage of every subcommand registered on an app.
class Commands {
 public:
  explicit Commands(CLI::App& app);
  ~Commands();
  Commands(const Commands&) = delete;
  Commands& operator=(const Commands&) = delete;

  /// Runs the subcommand selected by the last parse.
  int run();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace dne::cli
