#pragma once

#include <functional>
#include <string>

#include "sspcab/gradcheck_suite.hpp"
#include "sspcab/metrics.hpp"
#include "sspcab/run_config.hpp"

namespace sspcab {

/// Receives one line of human-readable progress or result output.
using LineSink = std::function<void(const std::string&)>;

/// Writes a synthetic corpus under `out`.
void run_synth(const RunConfig& cfg, const LineSink& sink);

/// Trains on the train-split `manifest` and writes `checkpoint` plus a CSV
/// loss log (`log`, default "<checkpoint>.loss.csv"). With `resume` set the
/// model, optimizer state and epoch counter come from that checkpoint and
/// training continues up to `epochs`.
void run_train(const RunConfig& cfg, const LineSink& sink);

/// Scores every frame of `manifest` with `checkpoint` into the score file
/// `scores`; with `maps` set also writes one rescaled PGM anomaly map per
/// frame plus a scales.txt sidecar.
void run_score(const RunConfig& cfg, const LineSink& sink);

/// Evaluates the score file `scores`; writes the report to `out` if given.
EvalReport run_eval(const RunConfig& cfg, const LineSink& sink);

/// Gradient-check suite seeded from `seed` over `gradcheck_seeds` seeds.
SuiteReport run_gradcheck(const RunConfig& cfg, const LineSink& sink);

}  // namespace sspcab
