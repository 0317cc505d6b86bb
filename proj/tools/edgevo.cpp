// Command-line front end: run, eval, synth, select-debug.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "edgevo/dataset_io.hpp"
#include "edgevo/edge_selection.hpp"
#include "edgevo/evaluation.hpp"
#include "edgevo/odometry.hpp"
#include "edgevo/run_config.hpp"
#include "edgevo/synthetic_world.hpp"

namespace fs = std::filesystem;
using namespace edgevo;

namespace {

enum ExitCode { kSuccess = 0, kUsage = 1, kDataError = 2, kTrackingFailure = 3 };

struct RunOptions {
  std::string config;
  std::string dataset;
  std::string output;
  std::optional<std::uint64_t> seed;
  bool no_selection = false;
  bool single_thread = false;
  std::optional<int> window_size;
  std::optional<int> edges_k;
  std::vector<std::string> overrides;
};

// Builds the run configuration: file first, then flags, then --set pairs.
RunConfig resolve(const RunOptions& o) {
  RunConfig c;
  if (!o.config.empty()) c.load(o.config);
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (!o.output.empty()) c.output = o.output;
  if (o.seed) c.odometry.selection.seed = *o.seed;
  if (o.no_selection) c.odometry.use_selection = false;
  if (o.single_thread) c.odometry.single_thread = true;
  if (o.window_size) c.odometry.mapping.window_size = *o.window_size;
  if (o.edges_k) c.odometry.selection.k = *o.edges_k;
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.odometry.validate();
  return c;
}

void add_common(CLI::App* app, RunOptions& o) {
  app->add_option("--config", o.config, "key=value configuration file");
  app->add_option("--dataset", o.dataset, "TUM RGBD sequence directory");
  app->add_option("--output", o.output, "output path");
  app->add_option("--seed", o.seed, "selection seed");
  app->add_flag("--no-selection", o.no_selection, "track all culled edges");
  app->add_flag("--single-thread", o.single_thread, "run mapping inline");
  app->add_option("--window-size", o.window_size, "sliding window size");
  app->add_option("--edges-k", o.edges_k, "edges selected per keyframe");
  app->add_option("--set", o.overrides, "extra key=value override")->take_all();
}

int cmd_run(const RunOptions& options) {
  RunConfig c;
  try {
    c = resolve(options);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  if (c.dataset.empty()) {
    std::cerr << "error: no dataset given\n";
    return kUsage;
  }
  SequenceReader reader(c.dataset, c.association_tolerance);
  std::cerr << "loaded " << reader.size() << " rgb/depth pairs (" << reader.dropped_rgb() << " rgb, "
            << reader.dropped_depth() << " depth unmatched)\n";
  if (reader.size() == 0) {
    std::cerr << "error: no associated frames in " << c.dataset << '\n';
    return kDataError;
  }
  fs::create_directories(c.output);
  {
    std::ofstream used(c.output / "config.txt");
    used << c.dump();
  }

  Odometry odometry(c.odometry);
  int status = kSuccess;
  while (auto record = reader.next()) {
    if (record->gray.width() != c.odometry.intrinsics.width || record->gray.height() != c.odometry.intrinsics.height) {
      std::cerr << "error: frame size " << record->gray.width() << "x" << record->gray.height()
                << " does not match the configured intrinsics\n";
      return kDataError;
    }
    const TrackStatus s = odometry.process(record->timestamp, std::move(record->gray), std::move(record->depth));
    if (s != TrackStatus::kOk) {
      std::cerr << "tracking " << to_string(s) << " at frame " << odometry.diagnostics().size() - 1
                << " timestamp " << std::fixed << std::setprecision(6) << record->timestamp << '\n';
      status = kTrackingFailure;
      break;
    }
  }
  for (const auto& w : reader.warnings()) std::cerr << "warning: " << w << '\n';
  odometry.finish();
  write_trajectory(odometry.trajectory(), c.output / "trajectory.txt");
  write_trajectory(odometry.keyframe_trajectory(), c.output / "keyframes.txt");
  write_diagnostics_csv(odometry, c.output / "diagnostics.csv");
  if (odometry.clamped_eigenvalue_events() > 0) {
    std::cerr << "warning: clamped negative prior eigenvalues " << odometry.clamped_eigenvalue_events()
              << " times\n";
  }

  std::vector<FrameTiming> timings;
  double edges = 0.0;
  for (const auto& d : odometry.diagnostics()) {
    timings.push_back(d.timing);
    edges += static_cast<double>(d.tracked_edges);
  }
  const auto t = timing_summary(timings);
  std::cout << "frames " << odometry.diagnostics().size() << ", keyframes " << odometry.keyframe_count()
            << ", mean tracked edges " << std::fixed << std::setprecision(1) << edges / timings.size() << '\n'
            << std::setprecision(3) << "per frame ms: mean " << t.total.mean_ms << " median " << t.total.median_ms
            << " p95 " << t.total.p95_ms << " (" << std::setprecision(1) << t.hz << " Hz)\n";
  return status;
}

struct EvalOptions {
  std::string estimated;
  std::string ground_truth;
  std::string csv;
  std::string errors;
  std::string diagnostics;
  std::string sequence = "sequence";
};

double diagnostics_hz(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot open diagnostics " + file.string());
  std::string line;
  std::vector<FrameTiming> frames;
  while (std::getline(in, line)) {
    if (line.rfind("tracked,", 0) != 0) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
    if (cols.size() < 16) continue;
    frames.push_back({std::stod(cols[12]), std::stod(cols[13]), std::stod(cols[14]), std::stod(cols[15])});
  }
  return timing_summary(frames).hz;
}

int cmd_eval(const EvalOptions& o) {
  const auto est = load_trajectory(o.estimated);
  const auto gt = load_trajectory(o.ground_truth);
  AteReport r;
  try {
    r = compute_ate(est, gt);
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  const double hz = o.diagnostics.empty() ? 0.0 : diagnostics_hz(o.diagnostics);
  std::cout << std::fixed << std::setprecision(6) << "matched   " << r.matches << "\n"
            << "rmse      " << r.rmse << " m\n"
            << "mean      " << r.mean << " m\n"
            << "median    " << r.median << " m\n"
            << "max       " << r.max << " m\n";
  if (r.translation_only) std::cout << "alignment translation only (degenerate trajectory)\n";
  if (hz > 0.0) std::cout << "rate      " << std::setprecision(1) << hz << " Hz\n";
  if (!o.csv.empty()) {
    const bool fresh = !fs::exists(o.csv);
    std::ofstream out(o.csv, std::ios::app);
    if (fresh) out << "sequence,rmse,mean,median,max,hz\n";
    out << o.sequence << std::setprecision(6) << ',' << r.rmse << ',' << r.mean << ',' << r.median << ',' << r.max
        << ',' << std::setprecision(2) << hz << '\n';
  }
  if (!o.errors.empty()) write_error_csv(r, o.errors);
  return kSuccess;
}

struct SynthOptions {
  std::string kind = "orbit";
  std::string output;
  std::string scene;
  int frames = 200;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthOptions& o) {
  const auto kind = parse_trajectory_kind(o.kind);
  if (!kind) {
    std::cerr << "error: unknown trajectory kind '" << o.kind << "'\n";
    return kUsage;
  }
  if (o.frames < 1) {
    std::cerr << "error: --frames must be positive\n";
    return kUsage;
  }
  SyntheticSequence seq;
  try {
    seq = make_sequence(*kind, o.frames, o.seed, o.scene);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  write_tum_sequence(seq, CameraIntrinsics{}, o.output);
  std::cout << "wrote " << seq.poses.size() << " frames to " << o.output << '\n';
  return kSuccess;
}

int cmd_select_debug(const RunOptions& options, std::size_t frame_index) {
  RunConfig c;
  try {
    c = resolve(options);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  if (c.dataset.empty()) {
    std::cerr << "error: no dataset given\n";
    return kUsage;
  }
  SequenceReader reader(c.dataset, c.association_tolerance);
  auto record = reader.at(frame_index);
  if (!record) {
    std::cerr << "error: frame " << frame_index << " unavailable\n";
    return kDataError;
  }
  const auto frame = preprocess_frame(record->timestamp, std::move(record->gray), std::move(record->depth),
                                      c.odometry.preprocess);
  const auto sel = select_edges(*frame, Pose::identity(), c.odometry.intrinsics, c.odometry.selection);
  const auto grid = partition_grid(c.odometry.intrinsics.width, c.odometry.intrinsics.height, c.odometry.selection.k);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!options.output.empty()) {
    file.open(options.output);
    if (!file) {
      std::cerr << "error: cannot write " << options.output << '\n';
      return kDataError;
    }
    out = &file;
  }
  *out << "order,x,y,cell,inv_depth,gradient_mag,probability\n";
  for (std::size_t rank = 0; rank < sel.greedy.selected.size(); ++rank) {
    const std::size_t i = sel.greedy.selected[rank];
    const auto& e = sel.culled[i];
    const int cell = (e.pixel.y() / grid.cell_size) * grid.cols + e.pixel.x() / grid.cell_size;
    *out << rank << ',' << e.pixel.x() << ',' << e.pixel.y() << ',' << cell << ',' << std::setprecision(9)
         << e.inv_depth << ',' << e.gradient_mag << ',' << sel.problem.candidates[i].probability << '\n';
  }
  std::cerr << sel.culled.size() << " culled edges, " << sel.problem.partitions.size() << " non-empty cells, "
            << sel.greedy.selected.size() << " selected\n";
  return kSuccess;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-based RGBD visual odometry"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "track a TUM RGBD sequence");
  add_common(run, run_opts);

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "absolute trajectory error of an estimate");
  eval->add_option("estimated", eval_opts.estimated, "estimated trajectory")->required();
  eval->add_option("groundtruth", eval_opts.ground_truth, "ground-truth trajectory")->required();
  eval->add_option("--csv", eval_opts.csv, "append a summary row to this CSV");
  eval->add_option("--errors", eval_opts.errors, "write per-pose errors to this CSV");
  eval->add_option("--diagnostics", eval_opts.diagnostics, "diagnostics CSV for the rate column");
  eval->add_option("--sequence", eval_opts.sequence, "sequence name for the CSV row");

  SynthOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "write a synthetic sequence in TUM layout");
  synth->add_option("--kind", synth_opts.kind, "static, line or orbit");
  synth->add_option("--output", synth_opts.output, "output directory")->required();
  synth->add_option("--frames", synth_opts.frames, "number of frames");
  synth->add_option("--seed", synth_opts.seed, "scene seed");
  synth->add_option("--scene", synth_opts.scene, "compact, wide, rich or cube");

  RunOptions select_opts;
  std::size_t frame_index = 0;
  auto* select = app.add_subcommand("select-debug", "dump the edge selection of one frame as CSV");
  add_common(select, select_opts);
  select->add_option("--frame", frame_index, "frame index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (run->parsed()) return cmd_run(run_opts);
    if (eval->parsed()) return cmd_eval(eval_opts);
    if (synth->parsed()) return cmd_synth(synth_opts);
    if (select->parsed()) return cmd_select_debug(select_opts, frame_index);
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}
