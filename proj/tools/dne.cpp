#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Deep neuroevolution with ensemble uncertainty quantification"};
  app.require_subcommand(1);
  dne::cli::Commands commands(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? dne::cli::kOk : dne::cli::kError;
  }
  try {
    return commands.run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return dne::cli::kError;
  }
}
