// Batch evaluation: synthetic end-to-end trials and metrics for annotated needles.

#include <cstdio>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "needleplan/evaluation.hpp"
#include "needleplan/text.hpp"

using namespace needleplan;

namespace {

int run_trials(const std::string& phantom, const std::string& targets_path, const std::string& noise_path, int trials,
               std::uint64_t seed, const std::string& out) {
  const DeskScene scene = phantom.empty() ? default_desk_scene() : parse_scene(text::read_file(phantom));
  const auto targets = targets_path.empty() ? scene.targets : parse_targets(text::read_file(targets_path));
  const NoiseModel noise = noise_path.empty() ? NoiseModel{} : parse_noise(text::read_file(noise_path));
  TrialOptions options;
  options.repeats = trials;
  const auto reports = run_synthetic_trial(scene, targets, noise, seed, options);
  const auto rows = aggregate_report(reports);
  const std::string report = format_aggregate(rows) + "\n" + format_reports(reports);
  if (out.empty() || out == "-") {
    std::cout << report;
  } else {
    text::write_file(out, report);
    std::cout << format_aggregate(rows);
  }
  return 0;
}

int metrics(const std::string& observed_path, const std::string& planned_path, const std::string& skin_path) {
  const auto observed = parse_observed(text::read_file(observed_path));
  const auto planned = parse_planned(text::read_file(planned_path));
  const MeshIndex skin(parse_obj(text::read_file(skin_path)));
  std::map<std::string, const NeedleTrajectory*> by_id;
  for (const auto& p : planned) by_id[p.target.id] = &p;

  std::cout << fmt::format("{:<12} {:>11} {:>13} {:>12}\n", "id", "target mm", "off-axis mm", "surface mm");
  int missing = 0;
  for (const auto& [id, obs] : observed) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      std::cerr << "no planned trajectory for " << id << "\n";
      ++missing;
      continue;
    }
    std::string surface;
    try {
      surface = fmt::format("{:12.3f}", surface_point_error(obs, *it->second, skin));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoPuncture) throw;
      surface = fmt::format("{:>12}", "no puncture");
    }
    std::cout << fmt::format("{:<12} {:11.3f} {:13.3f} {}\n", id, target_error(obs, *it->second),
                             off_axis_error(obs, *it->second), surface);
  }
  return missing == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Needle placement evaluation"};
  app.require_subcommand(1);

  std::string phantom, targets, noise, out;
  int trials = 1;
  std::uint64_t seed = 1;
  auto* run = app.add_subcommand("run", "Synthetic end-to-end trials");
  run->add_option("--phantom", phantom, "Scene description (default: built-in thorax desk scene)");
  run->add_option("--targets", targets, "Target list (default: organ centers of the scene)");
  run->add_option("--noise", noise, "Noise model (default: zero noise)");
  run->add_option("--trials", trials, "Repeats per target")->check(CLI::Range(1, 100000));
  run->add_option("--seed", seed, "Seed");
  run->add_option("--out", out, "Report file ('-' for stdout)");

  std::string observed, planned, skin;
  auto* met = app.add_subcommand("metrics", "Errors of annotated needles against their plans");
  met->add_option("--observed", observed, "Lines: id tip(3) base(3)")->required();
  met->add_option("--planned", planned, "Lines: id target(3) insertion(3)")->required();
  met->add_option("--skin", skin, "Skin mesh (OBJ)")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_trials(phantom, targets, noise, trials, seed, out);
    return metrics(observed, planned, skin);
  } catch (const Error& e) {
    std::cerr << "plan-eval: " << e.what() << "\n";
    return 2;
  }
}
