// urbanwind: dataset generation, training, inference, evaluation, serving.
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "urbanwind/http_server.hpp"
#include "urbanwind/service.hpp"

namespace fs = std::filesystem;
using namespace urbanwind;

namespace {

struct CliError : std::runtime_error {
  CliError(std::string kind, const std::string& msg) : std::runtime_error(msg), kind(std::move(kind)) {}
  std::string kind;
};

int fail(const std::string& command, const std::string& kind, const std::string& message) {
  nlohmann::json j = {{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
  std::cerr << j.dump() << std::endl;
  return 1;
}

std::vector<Direction> parse_directions(const std::string& s) {
  if (s == "all") return {kAllDirections.begin(), kAllDirections.end()};
  std::vector<Direction> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    const auto d = parse_direction(tok);
    if (!d) throw CliError("usage", "unknown direction '" + tok + "'");
    out.push_back(*d);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GenOptions {
  std::string out;
  int scenes = 8;
  std::vector<std::string> scene_files;
  int grid = 64;
  std::string directions = "all";
  std::vector<double> slices{1.5};
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double ratio = 0.8;
  unsigned threads = 0;
  int max_iters = 5000;
  double tol = 1e-5;
  double viscosity = 10.0;
};

int run_gen(const GenOptions& o) {
  std::vector<UrbanScene> scenes;
  if (!o.scene_files.empty()) {
    for (const std::string& f : o.scene_files) scenes.push_back(load_scene(f));
  } else {
    scenes = synthetic_scenes(o.scenes, o.seed);
  }
  GenerationConfig cfg;
  cfg.grid = o.grid;
  cfg.directions = parse_directions(o.directions);
  cfg.slice_heights = o.slices;
  cfg.split_seed = o.split_seed;
  cfg.split_ratio = o.ratio;
  cfg.threads = o.threads;
  cfg.solver.max_iters = o.max_iters;
  cfg.solver.residual_tol = o.tol;
  cfg.solver.viscosity = o.viscosity;
  DatasetManifest m = generate_dataset(scenes, cfg, o.out, [](std::size_t done, std::size_t total) {
    if (done % 50 == 0 || done == total) std::cerr << "gen " << done << "/" << total << "\n";
  });
  m.generation = {{"scenes", o.scene_files.empty() ? nlohmann::json(o.scenes) : nlohmann::json(o.scene_files)},
                  {"scene_seed", o.seed},
                  {"grid", o.grid},
                  {"directions", o.directions},
                  {"slices", o.slices},
                  {"max_iters", o.max_iters},
                  {"tol", o.tol},
                  {"viscosity", o.viscosity}};
  save_manifest(m, fs::path(o.out) / "manifest.json");
  std::cout << nlohmann::json{{"manifest", (fs::path(o.out) / "manifest.json").string()},
                              {"entries", m.entries.size()},
                              {"failures", m.failures.size()},
                              {"train", m.select(Split::Train).size()},
                              {"test", m.select(Split::Test).size()}}
                   .dump()
            << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string manifest;
  std::string out = "model.wckp";
  std::string log;
  int size = 64;
  int rf = 142;
  double lr = 2e-4;
  double lambda_l1 = 100.0;
  int epochs = 200;
  int batch = 4;
  std::uint64_t seed = 0;
  int base_width = 16;
  int checkpoint_every = 0;
};

int run_train(const TrainOptions& o) {
  const fs::path manifest_path(o.manifest);
  const DatasetManifest m = load_manifest(manifest_path);
  check_disjoint(m);
  if (m.grid != o.size) {
    throw CliError("usage", "manifest grid is " + std::to_string(m.grid) + ", --size is " + std::to_string(o.size));
  }
  const Normalization norm;
  const SampleSet data = load_samples(m, manifest_path.parent_path(), Split::Train, norm);
  GeneratorConfig gc;
  gc.input_size = o.size;
  gc.base_width = o.base_width;
  DiscriminatorConfig dc;
  dc.receptive_field = parse_receptive_field(o.rf);
  dc.base_width = o.base_width;
  TrainConfig tc;
  tc.lr = o.lr;
  tc.lambda_l1 = o.lambda_l1;
  tc.epochs = o.epochs;
  tc.batch = o.batch;
  tc.seed = o.seed;
  tc.checkpoint_every = o.checkpoint_every;

  std::ofstream log_file;
  if (!o.log.empty()) {
    log_file.open(o.log);
    if (!log_file) throw CliError("io", "cannot write " + o.log);
  }
  auto on_epoch = [&](const EpochLog& e) {
    const std::string line = to_json(e).dump();
    std::cerr << line << "\n";
    if (log_file) log_file << line << std::endl;
  };
  auto on_checkpoint = [&](const ModelCheckpoint& ck, int epoch) {
    if (epoch == tc.epochs) {
      save_checkpoint(o.out, ck);
    } else {
      save_checkpoint(o.out + ".epoch" + std::to_string(epoch), ck);
    }
  };
  const TrainResult r = train(data, tc, gc, dc, norm, on_checkpoint, on_epoch);
  std::cout << nlohmann::json{{"checkpoint", o.out},
                              {"checkpoint_id", checkpoint_id(r.checkpoint)},
                              {"samples", data.size()},
                              {"final", to_json(r.log.back())}}
                   .dump()
            << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------

struct InferOptions {
  std::string checkpoint;
  std::string scene;
  std::string input;
  std::string direction = "W";
  double slice_height = 1.5;
  double inlet_speed = 5.0;
  int mc_samples = 30;
  double dropout_p = 0.5;
  std::optional<std::uint64_t> seed;
  std::string comfort;
  std::string out_dir = ".";
};

int run_infer(const InferOptions& o) {
  const auto engine = InferenceEngine::from_file(o.checkpoint);
  InferenceRequest req;
  if (o.scene.empty() == o.input.empty()) throw CliError("usage", "give exactly one of --scene or --input");
  if (!o.scene.empty()) req.scene = load_scene(o.scene);
  if (!o.input.empty()) req.input = encoded_input_from(read_field(o.input));
  const auto d = parse_direction(o.direction);
  if (!d) throw CliError("usage", "unknown direction '" + o.direction + "'");
  req.direction = *d;
  req.slice_height = o.slice_height;
  req.inlet_speed = o.inlet_speed;
  req.mc_samples = o.mc_samples;
  req.dropout_p = o.dropout_p;
  req.seed = o.seed;
  if (!o.comfort.empty()) req.comfort = load_comfort_spec(o.comfort);
  const InferenceResult r = engine->infer(req);

  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_field((dir / "mean.wfld").string(), grid_field(r.mean, FieldRole::Prediction));
  write_field((dir / "stddev.wfld").string(), grid_field(r.stddev, FieldRole::StdDev));
  write_field((dir / "comfort.wfld").string(), grid_field(r.comfort, FieldRole::Comfort));
  write_field((dir / "mask.wfld").string(), grid_field(r.mask, FieldRole::Mask));

  double lo = 1e300, hi = -1e300, sum = 0.0, sd = 0.0;
  std::size_t open = 0;
  for (std::size_t i = 0; i < r.mean.size(); ++i) {
    if (r.mask.values()[i]) continue;
    const double v = r.mean.values()[i];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
    sd += r.stddev.values()[i];
    ++open;
  }
  std::vector<std::size_t> bands(req.comfort.bands.size() + 1, 0);
  for (int c : r.comfort.values()) {
    if (c >= 0) ++bands[static_cast<std::size_t>(c)];
  }
  nlohmann::json band_counts;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    band_counts[b < req.comfort.bands.size() ? req.comfort.bands[b].name : req.comfort.overflow_name] = bands[b];
  }
  const nlohmann::json summary = {
      {"checkpoint_id", engine->checkpoint_id()},
      {"seed", r.seed},
      {"mc_samples", r.mc_samples},
      {"dropout_p", r.dropout_p},
      {"shape", {r.mean.rows(), r.mean.cols()}},
      {"open_cells", open},
      {"mean_factor", open ? nlohmann::json{{"min", lo}, {"max", hi}, {"avg", sum / open}} : nlohmann::json()},
      {"avg_stddev", open ? sd / open : 0.0},
      {"comfort_cells", band_counts},
      {"files", {"mean.wfld", "stddev.wfld", "comfort.wfld", "mask.wfld"}}};
  std::ofstream((dir / "summary.json").string()) << summary.dump(2) << '\n';
  std::cout << summary.dump() << std::endl;
  std::cerr << "timing_ms " << r.timing_ms << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string manifest;
  std::string checkpoint;
  bool identity = false;
  std::string split = "test";
  std::string out;
  int mc_samples = 0;
  double dropout_p = 0.5;
  std::uint64_t seed = 0;
  std::string comfort;
  double inlet_speed = 5.0;
};

int run_eval(const EvalOptions& o) {
  if (o.identity == !o.checkpoint.empty()) throw CliError("usage", "give exactly one of --checkpoint or --identity");
  const fs::path manifest_path(o.manifest);
  const DatasetManifest m = load_manifest(manifest_path);
  check_disjoint(m);
  const Split split = o.split == "train" ? Split::Train : o.split == "test" ? Split::Test : Split::Unassigned;
  if (split == Split::Unassigned) throw CliError("usage", "--split must be train or test");
  std::shared_ptr<const InferenceEngine> engine;
  if (!o.identity) engine = InferenceEngine::from_file(o.checkpoint);
  const Normalization norm = engine ? engine->normalization() : Normalization{};
  const SampleSet data = load_samples(m, manifest_path.parent_path(), split, norm);
  if (data.size() == 0) throw CliError("data", "split '" + o.split + "' has no samples");

  std::vector<EvalSample> samples;
  std::optional<Generator<float>> g;
  if (engine) g = load_generator(load_checkpoint(o.checkpoint));
  for (std::size_t i = 0; i < data.size(); ++i) {
    EvalSample s;
    s.truth = data.truths[i];
    s.complexity = data.entries[i].complexity;
    s.pred = s.truth;
    if (g) {
      const std::size_t idx[] = {i};
      const nn::Tensor<float> x = gather(data.inputs, idx);
      s.pred.factors = o.mc_samples > 0 ? mc_predict(*g, x, norm, o.mc_samples, o.dropout_p, o.seed).mean
                                        : predict(*g, x, norm);
    }
    samples.push_back(std::move(s));
  }
  BandContext bands;
  bands.inlet_speed = o.inlet_speed;
  if (!o.comfort.empty()) bands.spec = load_comfort_spec(o.comfort);
  nlohmann::json report = to_json(evaluate(samples, bands));
  const auto [constant, baseline_mae] = best_constant_baseline(samples);
  report["baseline"] = {{"constant", constant}, {"mae_mean", baseline_mae}};
  report["predictor"] = o.identity ? "identity" : "checkpoint:" + engine->checkpoint_id();
  report["split"] = o.split;
  if (!o.out.empty()) std::ofstream(o.out) << report.dump(2) << '\n';
  std::cout << report.dump() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string checkpoint;
};

InferenceServer* g_server = nullptr;

int run_serve(ServeOptions o) {
  if (const char* env = std::getenv("URBANWIND_PORT")) o.port = std::stoi(env);
  if (const char* env = std::getenv("URBANWIND_CHECKPOINT")) o.checkpoint = env;
  if (o.checkpoint.empty()) throw CliError("usage", "no checkpoint: pass --checkpoint or set URBANWIND_CHECKPOINT");
  InferenceServer server;
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  server.load_async(o.checkpoint);
  const int port = server.start(o.host, o.port);
  std::cout << nlohmann::json{{"listening", o.host + ":" + std::to_string(port)}}.dump() << std::endl;
  server.wait();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urbanwind: pedestrian wind-factor surrogate"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate an oracle dataset and manifest");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--scenes", gen.scenes, "Number of synthetic scenes")->check(CLI::PositiveNumber);
  g->add_option("--scene-file", gen.scene_files, "Scene documents (replaces synthetic scenes)");
  g->add_option("--grid", gen.grid, "Raster size")->check(CLI::PositiveNumber);
  g->add_option("--directions", gen.directions, "Comma list of directions or 'all'");
  g->add_option("--slices", gen.slices, "Slice heights above the ground datum (m)");
  g->add_option("--seed", gen.seed, "Synthetic scene seed");
  g->add_option("--split-seed", gen.split_seed, "Train/test split seed");
  g->add_option("--ratio", gen.ratio, "Train fraction");
  g->add_option("--threads", gen.threads, "Worker threads (0: all cores)");
  g->add_option("--max-iters", gen.max_iters, "Solver iteration cap");
  g->add_option("--tol", gen.tol, "Solver residual tolerance");
  g->add_option("--viscosity", gen.viscosity, "Effective viscosity at the reference speed (m^2/s)");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train the generator and discriminator");
  t->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  t->add_option("--out", tr.out, "Checkpoint path");
  t->add_option("--log", tr.log, "Per-epoch JSON lines log");
  t->add_option("--size", tr.size, "Input size (64, 128, 256, 512)");
  t->add_option("--rf", tr.rf, "Discriminator receptive field (70, 142, 286)");
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--lambda-l1", tr.lambda_l1, "L1 weight");
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--batch", tr.batch, "Batch size");
  t->add_option("--seed", tr.seed, "Seed");
  t->add_option("--base-width", tr.base_width, "Channels of the first layer");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Intermediate checkpoint cadence in epochs");

  InferOptions inf;
  std::uint64_t infer_seed = 0;
  auto* i = app.add_subcommand("infer", "MC-dropout prediction for one scene or input stack");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint")->required();
  i->add_option("--scene", inf.scene, "Scene document");
  i->add_option("--input", inf.input, "Encoded input stack (WFLD)");
  i->add_option("--direction", inf.direction, "Wind direction (from)");
  i->add_option("--slice-height", inf.slice_height, "Slice height (m)");
  i->add_option("--inlet-speed", inf.inlet_speed, "Reference inlet speed (m/s)");
  i->add_option("--mc-samples", inf.mc_samples, "Dropout passes");
  i->add_option("--dropout-p", inf.dropout_p, "Dropout probability");
  auto* seed_opt = i->add_option("--seed", infer_seed, "Seed (random when omitted)");
  i->add_option("--comfort", inf.comfort, "Comfort band spec (JSON)");
  i->add_option("--out-dir", inf.out_dir, "Output directory");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Error report over a manifest split");
  e->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint");
  e->add_flag("--identity", ev.identity, "Use the truth as prediction");
  e->add_option("--split", ev.split, "train or test");
  e->add_option("--out", ev.out, "Report path");
  e->add_option("--mc-samples", ev.mc_samples, "Use the MC mean of this many passes (0: deterministic)");
  e->add_option("--dropout-p", ev.dropout_p, "Dropout probability for MC evaluation");
  e->add_option("--seed", ev.seed, "MC seed");
  e->add_option("--comfort", ev.comfort, "Comfort band spec (JSON) for the per-band breakdown");
  e->add_option("--inlet-speed", ev.inlet_speed, "Reference inlet speed for the per-band breakdown (m/s)");

  ServeOptions sv;
  auto* s = app.add_subcommand("serve", "HTTP inference service");
  s->add_option("--host", sv.host, "Bind address");
  s->add_option("--port", sv.port, "Port (env URBANWIND_PORT)");
  s->add_option("--checkpoint", sv.checkpoint, "Checkpoint (env URBANWIND_CHECKPOINT)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    return fail(argc > 1 ? argv[1] : "", "usage", err.what());
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen") return run_gen(gen);
    if (command == "train") return run_train(tr);
    if (command == "infer") {
      if (seed_opt->count() > 0) inf.seed = infer_seed;
      return run_infer(inf);
    }
    if (command == "eval") return run_eval(ev);
    if (command == "serve") return run_serve(sv);
  } catch (const CliError& err) {
    return fail(command, err.kind, err.what());
  } catch (const FormatError& err) {
    return fail(command, std::string("format.") + to_string(err.kind()), err.what());
  } catch (const GeometryError& err) {
    return fail(command, "geometry", err.what());
  } catch (const RequestError& err) {
    return fail(command, "request", err.what());
  } catch (const TrainingError& err) {
    return fail(command, "training", err.what());
  } catch (const std::exception& err) {
    return fail(command, "error", err.what());
  }
  return fail(command, "usage", "unknown command");
}
