// SPDX-License-Identifier: Apache-2.0
//
// Library walk-through: forecast 24 hours of the synthetic oil-temperature
// channel from the previous 96 hours and compare against repeat-last.
#include <iostream>

#include "kunet/kunet.hpp"

int main() {
  using namespace kunet;

  // One channel of the bundled surrogate; swap in load_csv("ETTh1.csv", {{"OT"}}) for real data.
  const auto all = ett_surrogate(3000);
  SeriesTable table{all.time_column, {"OT"}, all.timestamps, {}};
  for (std::size_t r = 0; r < all.rows(); ++r) table.values.push_back(all.at(r, 6));

  // 96 = 4 * 4 * 6 on the way in, 24 = 2 * 2 * 6 on the way out.
  ModelConfig cfg;
  cfg.plan.seq_len = 96;
  cfg.plan.lookback = {4, {4, 6}};
  cfg.plan.horizon = LengthSchedule{2, {2, 6}};
  cfg.plan.hidden = 16;
  cfg.variant = Variant::linear_1_hidden;
  KUNet<double> model(cfg, 42);

  TrainConfig tc;
  tc.epochs = 15;
  tc.patience = 4;
  tc.seed = 42;
  const auto windows = make_window_sets(split(table, {}), 96, 24);
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& e) { std::cout << epoch_line(e) << '\n'; };
  const auto report = train(model, tc, table, windows, hooks);
  const auto base = evaluate_repeat_last<double>(table, windows.test, 96, 24);

  std::cout << summary_line(report) << '\n'
            << "repeat_last mse=" << base.mse << " mae=" << base.mae << '\n';
  return 0;
}
