// Small comparison of position-embedding modes on the relative-offset task:
// train at length 32, evaluate at 32 and 64. Uses a reduced budget so it
// finishes in about a minute; the `compare` subcommand runs the full one.

#include <iostream>

#include "ropeformer/config.hpp"
#include "ropeformer/experiment.hpp"

namespace rf = ropeformer;

int main() {
  rf::ExperimentConfig cfg = rf::ExperimentConfig::desk_defaults();
  cfg.modes = {rf::PEKind::rotary, rf::PEKind::relative, rf::PEKind::sinusoidal, rf::PEKind::none};
  cfg.seeds = {0};
  cfg.steps = 150;
  const rf::ExperimentReport report = rf::run_experiment(cfg, rf::config_hash(cfg));
  std::cout << rf::format_report(report, {rf::TableFormat::markdown, true});
  return 0;
}
