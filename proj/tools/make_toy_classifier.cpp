// Regenerates assets/toy_mlp.json, the attack target.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "zol2l/tasks.hpp"

int main(int argc, char** argv) {
  CLI::App app{"train the 8x8 digit classifier used by the attack tasks"};
  std::uint64_t seed = 7;
  std::string out = "toy_mlp.json";
  app.add_option("--seed", seed, "dataset and initialization seed");
  app.add_option("--out", out, "output path");
  CLI11_PARSE(app, argc, argv);

  const zol2l::ClassifierTraining r = zol2l::train_toy_classifier(seed);
  std::cout << "train accuracy " << r.train_accuracy << ", held-out accuracy " << r.heldout_accuracy << '\n';
  if (r.heldout_accuracy < 0.9) {
    std::cerr << "held-out accuracy below 0.9\n";
    return 3;
  }
  std::ofstream f(out);
  f << zol2l::classifier_to_json(r.model).dump(1) << '\n';
  return f ? 0 : 2;
}
