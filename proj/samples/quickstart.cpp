// Generates a small gridworld dataset, trains the two-stage baseline and a
// decision-focused model, and compares their test-split OPE.
#include "dfmdp/experiment.hpp"

#include <iostream>

int main() {
  using namespace dfmdp;
  const Dataset ds = generate_dataset(Domain::gridworld, Regime::near_optimal, 7);
  std::cout << "dataset: " << ds.indices(Split::train).size() << " train, " << ds.indices(Split::val).size()
            << " val, " << ds.indices(Split::test).size() << " test instances\n";

  for (Method m : {Method::ts, Method::pg_w}) {
    auto cfg = default_train_config(ds.domain, ds.config);
    cfg.method = m;
    cfg.epochs = 20;
    cfg.seed = 1;
    const auto run = run_experiment(ds, cfg);
    std::cout << to_string(m) << ": epoch " << run.train.log.chosen_epoch << " selected, test OPE "
              << run.test.mean << " ± " << run.test.stderr_ << " (" << run.train_seconds << " s)\n";
  }
}
