// gcml: generate data, train, evaluate, render activation maps and run the
// property suites.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "gcml/cam.hpp"
#include "gcml/checkpoint.hpp"
#include "gcml/config.hpp"
#include "gcml/pipeline.hpp"
#include "gcml/verify.hpp"

namespace fs = std::filesystem;
using namespace gcml;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig resolve_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  set_num_threads(cfg.threads);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

void print_epoch(const EpochMetrics& m) {
  std::fprintf(stderr, "epoch %3d  %-15s loss %.4f  score %.4f  (%.1fs)\n", m.epoch, m.phase.c_str(), m.loss,
               m.score, m.wall_seconds);
}

int cmd_generate(const std::string& spec_path, const std::string& out_dir) {
  const SyntheticSpec spec = spec_path.empty() ? SyntheticSpec{} : load_synthetic_spec(spec_path);
  const auto data = generate_synthetic(spec);
  fs::create_directories(out_dir);
  write_dataset(out_dir, data);
  std::cout << "wrote " << data.size() << " images (" << spec.num_classes << " classes x "
            << spec.instances_per_class << " instances x " << spec.views_per_instance << " views) to " << out_dir
            << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, phase, init, out, metrics;
  bool allow_cold_start = false;
};

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = resolve_config(args.config);
  const Phase phase = args.phase.empty() ? cfg.phase : parse_phase(args.phase);
  if (args.allow_cold_start) cfg.retrieve.allow_cold_start = true;

  const auto data = load_run_data(cfg);
  std::optional<Model<float>> model;
  Initialization init = Initialization::cold_start;
  if (!args.init.empty()) {
    model.emplace(load_checkpoint(args.init, cfg.model));
    init = Initialization::from_classification;
  } else {
    if (phase == Phase::retrieve && !cfg.retrieve.allow_cold_start)
      throw UsageError(
          "retrieval training is the second step of a two-step procedure: pass --init with a checkpoint from "
          "the classify phase (or --allow-cold-start to override)");
    model.emplace(cfg.model);
  }
  const auto metrics = run_phase(*model, cfg, phase, init, data, print_epoch);
  save_checkpoint(*model, args.out);
  const fs::path metrics_path = args.metrics.empty() ? fs::path(args.out + ".metrics.tsv") : fs::path(args.metrics);
  std::ofstream log(metrics_path, std::ios::binary | std::ios::trunc);
  if (!log) throw DataError("cannot open '" + metrics_path.string() + "' for writing");
  write_metrics_tsv(log, metrics, cfg.log_wall_time);
  std::cout << "wrote " << args.out << " and " << metrics_path.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& config, const std::string& ckpt, bool rotated, const std::string& out) {
  const RunConfig cfg = resolve_config(config);
  auto model = load_checkpoint(ckpt, cfg.model);
  const auto data = load_run_data(cfg);
  const auto result = run_evaluation(model, cfg, data);
  std::ostringstream main_table;
  write_recall_tsv(main_table, {rotated ? result.rotated : result.unrotated});
  write_text(out, main_table.str());
  std::cout << main_table.str();
  if (rotated) {
    fs::path paired = fs::path(out);
    paired.replace_extension(".unrotated.tsv");
    std::ostringstream plain;
    write_recall_tsv(plain, {result.unrotated});
    write_text(paired, plain.str());
    std::cout << "wrote " << out << " (rotated queries) and " << paired.string() << " (unrotated)\n";
  } else {
    std::cout << "wrote " << out << "\n";
  }
  return kOk;
}

struct CamArgs {
  std::string config, ckpt, image, mode = "class", db_image, out;
  int class_index = -1;
  bool sweep = false;
};

int cmd_cam(const CamArgs& args) {
  const RunConfig cfg = resolve_config(args.config);
  auto model = load_checkpoint(args.ckpt, cfg.model);
  const Image image = load_pgm_ppm(args.image);
  check_compatible({Sample{{args.image, 0, 0, 0, 0}, image}}, model.config());

  CamTarget target;
  if (args.mode == "class") {
    target.mode = CamMode::classification;
    if (args.class_index >= 0) {
      target.class_index = args.class_index;
    } else {
      NoGradGuard guard;
      Dataset one{Sample{{}, image}};
      const auto logits = model.forward_classify(stack_images(one)).values();
      target.class_index = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
  } else if (args.mode == "retrieval") {
    target.mode = CamMode::retrieval;
    Dataset db;
    if (!args.db_image.empty()) {
      db.push_back(Sample{{args.db_image, 0, 0, 0, 0}, load_pgm_ppm(args.db_image)});
    } else {
      const int view[] = {cfg.database_view};
      db = filter_views(load_run_data(cfg), view);
      if (db.empty()) throw DataError("no database images to retrieve from");
    }
    check_compatible(db, model.config());
    const auto db_emb = embed_dataset(model, db);
    const auto q_emb = embed_dataset(model, Dataset{Sample{{}, image}});
    std::vector<long> ids(db.size());
    std::vector<int> labels(db.size(), 0);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<long>(i);
    const auto index = build_index(db_emb, ids, labels);
    const auto best = query(index, q_emb.values(), 1).ranked_ids.at(0);
    const auto row = index.row(static_cast<std::size_t>(best));
    target.db_embedding.assign(row.begin(), row.end());
    std::cout << "retrieved " << db[static_cast<std::size_t>(best)].meta.relative_path << "\n";
  } else {
    throw UsageError("--mode must be class or retrieval");
  }

  const fs::path out(args.out);
  if (!args.sweep) {
    save_ppm(out, overlay_heatmap(image, compute_cam(model, image, target)));
    std::cout << "wrote " << out.string() << "\n";
    return kOk;
  }
  const Heatmap base = compute_cam(model, image, target);
  for (int k = 0; k < 4; ++k) {
    const Image rotated = rotate_image(image, k);
    const Heatmap map = compute_cam(model, rotated, target);
    fs::path file = out.parent_path() / (out.stem().string() + "_rot" + std::to_string(90 * k) + ".ppm");
    save_ppm(file, overlay_heatmap(rotated, map));
    const Heatmap expected = rotate_heatmap(base, k);
    std::printf("wrote %s  relative L2 vs rotated base map %.3e\n", file.string().c_str(),
                relative_l2(map.values, expected.values));
  }
  return kOk;
}

int cmd_verify(const std::string& suite) {
  std::vector<CheckResult> results;
  if (suite == "group" || suite == "all") {
    auto r = verify_group();
    results.insert(results.end(), r.begin(), r.end());
  }
  if (suite == "equivariance" || suite == "all") {
    auto r = verify_equivariance();
    results.insert(results.end(), r.begin(), r.end());
  }
  if (suite == "gradient" || suite == "all") {
    auto r = verify_gradients();
    results.insert(results.end(), r.begin(), r.end());
    double worst = 0;
    for (const auto& c : r) worst = std::max(worst, c.value);
    std::printf("max relative gradient error: %.3e\n", worst);
  }
  const bool ok = print_results(std::cout, results);
  std::cout << (ok ? "all checks passed" : "some checks FAILED") << "\n";
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-equivariant CNNs for rotation-robust image retrieval"};
  app.require_subcommand(1);

  std::string spec_path, gen_out;
  auto* gen = app.add_subcommand("generate", "write the seeded synthetic dataset");
  gen->add_option("--spec", spec_path, "synthetic spec file (key = value)");
  gen->add_option("--out", gen_out, "output directory")->required();

  TrainArgs targs;
  bool train_print = false;
  auto* train = app.add_subcommand("train", "run one training phase");
  train->add_option("--config", targs.config, "run configuration file");
  train->add_option("--phase", targs.phase, "classify or retrieve (default: train.phase)");
  train->add_option("--init", targs.init, "checkpoint to start from");
  train->add_flag("--allow-cold-start", targs.allow_cold_start, "allow retrieval training from random weights");
  train->add_option("--out", targs.out, "checkpoint to write");
  train->add_option("--metrics", targs.metrics, "metrics log (default: <out>.metrics.tsv)");
  train->add_flag("--print-config", train_print, "print the resolved configuration and exit");

  std::string eval_config, eval_ckpt, eval_out;
  bool eval_rotated = false, eval_plain = false, eval_print = false;
  auto* eval = app.add_subcommand("eval", "Recall@n on the query view");
  eval->add_option("--config", eval_config, "run configuration file");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint");
  auto* rot_flag = eval->add_flag("--rotated", eval_rotated, "rotate each query by a seeded multiple of 90 degrees");
  auto* plain_flag = eval->add_flag("--plain", eval_plain, "unrotated queries");
  rot_flag->excludes(plain_flag);
  eval->add_option("--out", eval_out, "recall table (TSV)");
  eval->add_flag("--print-config", eval_print, "print the resolved configuration and exit");

  CamArgs cargs;
  bool cam_print = false;
  auto* cam = app.add_subcommand("cam", "render an activation-map overlay");
  cam->add_option("--config", cargs.config, "run configuration file");
  cam->add_option("--ckpt", cargs.ckpt, "checkpoint");
  cam->add_option("--image", cargs.image, "input PGM/PPM");
  cam->add_option("--mode", cargs.mode, "class or retrieval")->check(CLI::IsMember({"class", "retrieval"}));
  cam->add_option("--class", cargs.class_index, "class index (default: predicted class)");
  cam->add_option("--db-image", cargs.db_image, "database image for retrieval mode (default: top-1 hit)");
  cam->add_flag("--sweep-rotations", cargs.sweep, "write one overlay per rotation of the input");
  cam->add_option("--out", cargs.out, "output PPM");
  cam->add_flag("--print-config", cam_print, "print the resolved configuration and exit");

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "run the property suites");
  verify->add_option("--suite", suite, "group, equivariance, gradient or all")
      ->check(CLI::IsMember({"group", "equivariance", "gradient", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  auto need = [](const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
  };

  try {
    if (*gen) return cmd_generate(spec_path, gen_out);
    if (*train) {
      if (train_print) return std::cout << format_run_config(resolve_config(targs.config)), kOk;
      need(targs.out, "--out");
      return cmd_train(targs);
    }
    if (*eval) {
      if (eval_print) return std::cout << format_run_config(resolve_config(eval_config)), kOk;
      need(eval_ckpt, "--ckpt");
      need(eval_out, "--out");
      if (!eval_rotated && !eval_plain) throw UsageError("pass --rotated or --plain");
      return cmd_eval(eval_config, eval_ckpt, eval_rotated, eval_out);
    }
    if (*cam) {
      if (cam_print) return std::cout << format_run_config(resolve_config(cargs.config)), kOk;
      need(cargs.ckpt, "--ckpt");
      need(cargs.image, "--image");
      need(cargs.out, "--out");
      return cmd_cam(cargs);
    }
    if (*verify) return cmd_verify(suite);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ColdStartError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
