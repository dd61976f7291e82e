// uhpc_synth: writes the synthetic UHPC benchmark as CSV.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mixforge/data.hpp"
#include "mixforge/error.hpp"
#include "mixforge/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic UHPC benchmark"};
  mixforge::SyntheticOptions opts;
  std::string out, corrupted_out;
  app.add_option("--rows", opts.rows, "Number of rows");
  app.add_option("--corrupt", opts.corrupt_fraction, "Fraction of rows with gross label noise")
      ->check(CLI::Range(0.0, 0.99));
  app.add_option("--noise", opts.noise_fraction, "Clean-row noise sd as a fraction of the target sd");
  app.add_option("--seed", opts.seed, "Seed");
  app.add_option("--out", out, "CSV path")->required();
  app.add_option("--corrupted-ids", corrupted_out, "Also write the corrupted row ids, one per line");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    const auto bench = mixforge::make_synthetic_uhpc(opts);
    mixforge::write_dataset(bench.data, out);
    if (!corrupted_out.empty()) {
      std::ofstream ids(corrupted_out);
      for (auto id : bench.corrupted) ids << id << '\n';
    }
    std::cout << "wrote " << bench.data.rows() << " rows (" << bench.corrupted.size() << " corrupted) to " << out
              << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
