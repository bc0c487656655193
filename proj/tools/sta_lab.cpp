// sta-lab: desk-scale experiment driver. Subcommands generate synthetic
// datasets, train and evaluate the segmentation model, dump block
// activations, run the block-similarity analysis, and print the FLOPs audit.
//
// Exit codes: 0 success, 2 configuration or input errors, 3 training
// divergence, 1 anything else.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stalab/cka.hpp"
#include "stalab/data.hpp"
#include "stalab/flops.hpp"
#include "stalab/io.hpp"
#include "stalab/loss.hpp"
#include "stalab/metrics.hpp"
#include "stalab/model.hpp"
#include "stalab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Worker-thread cap. Parsed for forward compatibility; every code path here
// is single-threaded, so any valid value runs the same way.
void check_thread_env() {
  const char* env = std::getenv("STA_LAB_THREADS");
  if (!env) return;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1)
    throw stalab::ConfigError("STA_LAB_THREADS must be a positive integer, got '" +
                              std::string(env) + "'");
}

struct CommonArgs {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  bool out_set = false;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "run configuration JSON")->required();
  sub->add_option("--seed", args.seed, "override the config seed")
      ->each([&](const std::string&) { args.seed_set = true; });
  sub->add_option("--out", args.out, "override the config output_dir")
      ->each([&](const std::string&) { args.out_set = true; });
}

stalab::RunConfig load_config(const CommonArgs& args) {
  stalab::RunConfig cfg = stalab::load_run_config(args.config_path);
  if (args.seed_set) {
    cfg.seed = args.seed;
    cfg.raw["seed"] = args.seed;
  }
  if (args.out_set) {
    cfg.output_dir = args.out;
    cfg.raw["output_dir"] = args.out;
  }
  return cfg;
}

void need(bool has, const char* cmd, const char* section) {
  if (!has)
    throw stalab::ConfigError(std::string(cmd) + ": config needs a '" + section +
                              "' section");
}

std::string need_output_dir(const stalab::RunConfig& cfg, const char* cmd) {
  if (cfg.output_dir.empty())
    throw stalab::ConfigError(std::string(cmd) + ": set output_dir or pass --out");
  return cfg.output_dir;
}

const std::vector<stalab::Sample>& pick_split(const stalab::DatasetOnDisk& ds,
                                              const std::string& split, const char* cmd) {
  if (split == "train") return ds.train;
  if (split == "test") return ds.test;
  throw stalab::ConfigError(std::string(cmd) + ": unknown split '" + split + "'");
}

// The dataset a checkpoint can consume is fixed by its model config.
void check_compat(const stalab::ModelConfig& m, const stalab::DatasetOnDisk& ds,
                  const std::vector<stalab::Sample>& split, const char* cmd) {
  if (ds.num_classes != m.num_classes)
    throw stalab::ConfigError(std::string(cmd) + ": dataset has " +
                              std::to_string(ds.num_classes) + " classes, model wants " +
                              std::to_string(m.num_classes));
  if (m.input_channels != 1)
    throw stalab::ConfigError(std::string(cmd) + ": grayscale datasets need a 1-channel " +
                              "model, config says " + std::to_string(m.input_channels));
  if (!split.empty() && (split[0].h != m.input_h || split[0].w != m.input_w))
    throw stalab::ConfigError(std::string(cmd) + ": samples are " +
                              std::to_string(split[0].w) + "x" + std::to_string(split[0].h) +
                              ", model wants " + std::to_string(m.input_w) + "x" +
                              std::to_string(m.input_h));
}

stalab::StaUnet<float> load_net(const std::string& path, const char* cmd,
                                stalab::CheckpointMeta* meta = nullptr) {
  if (path.empty())
    throw stalab::ConfigError(std::string(cmd) + ": no checkpoint path configured");
  if (!fs::exists(path))
    throw stalab::ConfigError(std::string(cmd) + ": checkpoint " + path + " does not exist");
  return stalab::load_checkpoint<float>(path, meta);
}

// Trace tap names in execution order: encoder blocks, bottleneck, decoder
// blocks from the deepest stage up.
std::vector<std::string> all_block_names(const stalab::ModelConfig& m) {
  std::vector<std::string> names;
  for (int k = 1; k <= 4; ++k)
    for (int64_t j = 1; j <= m.sta_layers[static_cast<size_t>(k - 1)]; ++j)
      names.push_back("enc" + std::to_string(k) + ".sta" + std::to_string(j));
  names.push_back("bottleneck");
  for (int k = 4; k >= 1; --k)
    for (int64_t j = 1; j <= m.sta_layers[static_cast<size_t>(k - 1)]; ++j)
      names.push_back("dec" + std::to_string(k) + ".sta" + std::to_string(j));
  return names;
}

int cmd_gen_data(const stalab::RunConfig& cfg) {
  need(cfg.has_data, "gen-data", "data");
  const stalab::DataSpec& d = cfg.data;
  if (d.dataset_dir.empty()) throw stalab::ConfigError("gen-data: data.dataset_dir is empty");
  if (d.num_train < 1 || d.num_test < 1)
    throw stalab::ConfigError("gen-data: num_train and num_test must be positive");
  if (d.extent < 8 || d.num_classes < 2)
    throw stalab::ConfigError("gen-data: need extent >= 8 and num_classes >= 2");
  const auto train = stalab::gen_dataset(d.num_train, d.extent, d.num_classes, cfg.seed, 0);
  const auto test = stalab::gen_dataset(d.num_test, d.extent, d.num_classes, cfg.seed, 1);
  stalab::save_dataset(d.dataset_dir, train, test, d.num_classes);
  std::printf("wrote %lld train + %lld test samples (%lldx%lld, %lld classes) to %s\n",
              static_cast<long long>(d.num_train), static_cast<long long>(d.num_test),
              static_cast<long long>(d.extent), static_cast<long long>(d.extent),
              static_cast<long long>(d.num_classes), d.dataset_dir.c_str());
  return 0;
}

int cmd_train(stalab::RunConfig& cfg, bool poly_per_epoch_flag) {
  need(cfg.has_model, "train", "model");
  need(cfg.has_train, "train", "train");
  need(cfg.has_data, "train", "data");
  const std::string out = need_output_dir(cfg, "train");
  if (poly_per_epoch_flag) {
    cfg.train.poly_per_epoch = true;
    cfg.raw["train"]["poly_per_epoch"] = true;
  }
  const stalab::DatasetOnDisk ds = stalab::load_dataset(cfg.data.dataset_dir);
  if (ds.train.empty()) throw stalab::ConfigError("train: dataset has no train split");
  check_compat(cfg.model, ds, ds.train, "train");

  auto net = stalab::build_model<float>(cfg.model, cfg.seed);
  stalab::TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;
  const stalab::TrainReport report =
      stalab::train(net, ds.train, tcfg, [&](int64_t epoch) {
        std::printf("epoch %lld/%lld\n", static_cast<long long>(epoch + 1),
                    static_cast<long long>(tcfg.epochs));
      });

  const std::string metrics_path = (fs::path(out) / "metrics.csv").string();
  stalab::write_bytes_atomic(metrics_path, stalab::metrics_csv(report));
  stalab::CheckpointMeta meta;
  meta.epoch = tcfg.epochs;
  meta.iteration = report.iterations;
  meta.config = cfg.raw;
  const std::string ckpt_path = (fs::path(out) / "checkpoint.stau").string();
  stalab::save_checkpoint(ckpt_path, net, meta);
  std::printf("trained %lld iterations, final loss %s\n",
              static_cast<long long>(report.iterations),
              report.rows.empty() ? "n/a"
                                  : stalab::format_double(report.rows.back().loss).c_str());
  std::printf("wrote %s and %s\n", metrics_path.c_str(), ckpt_path.c_str());
  return 0;
}

int cmd_eval(const stalab::RunConfig& cfg, const std::vector<int64_t>& exclude_cli) {
  need(cfg.has_eval, "eval", "eval");
  need(cfg.has_data, "eval", "data");
  const std::string out = need_output_dir(cfg, "eval");
  if (cfg.eval.batch_size < 1) throw stalab::ConfigError("eval: batch_size must be positive");

  auto net = load_net(cfg.eval.checkpoint, "eval");
  const stalab::DatasetOnDisk ds = stalab::load_dataset(cfg.data.dataset_dir);
  const auto& split = pick_split(ds, cfg.eval.split, "eval");
  if (split.empty())
    throw stalab::ConfigError("eval: split '" + cfg.eval.split + "' is empty");
  check_compat(net.cfg, ds, split, "eval");

  const int64_t k = net.cfg.num_classes;
  std::vector<int64_t> exclude = exclude_cli.empty() ? cfg.eval.exclude_classes : exclude_cli;
  std::vector<bool> excluded(static_cast<size_t>(k), false);
  for (int64_t c : exclude) {
    if (c < 0 || c >= k)
      throw stalab::ConfigError("eval: excluded class " + std::to_string(c) +
                                " outside [0, " + std::to_string(k) + ")");
    excluded[static_cast<size_t>(c)] = true;
  }
  int64_t included = 0;
  for (bool e : excluded)
    if (!e) ++included;
  if (included == 0) throw stalab::ConfigError("eval: every class excluded");

  auto included_mean = [&](const std::vector<double>& per_class) {
    double acc = 0;
    for (int64_t c = 0; c < k; ++c)
      if (!excluded[static_cast<size_t>(c)]) acc += per_class[static_cast<size_t>(c)];
    return acc / static_cast<double>(included);
  };

  std::string csv = "case";
  for (int64_t c = 0; c < k; ++c) csv += ",dsc_" + std::to_string(c);
  csv += ",mean_dsc";
  for (int64_t c = 0; c < k; ++c) csv += ",iou_" + std::to_string(c);
  csv += ",mean_iou\n";

  std::vector<double> dsc_sum(static_cast<size_t>(k), 0), iou_sum(static_cast<size_t>(k), 0);
  double mean_dsc_sum = 0, mean_iou_sum = 0;
  const int64_t n = static_cast<int64_t>(split.size());
  for (int64_t begin = 0; begin < n; begin += cfg.eval.batch_size) {
    const int64_t end = std::min(n, begin + cfg.eval.batch_size);
    const std::vector<stalab::Sample> chunk(split.begin() + begin, split.begin() + end);
    auto [x, y] = stalab::make_batch<float>(chunk);
    auto probs = stalab::forward(net, x, /*training=*/false);
    const stalab::LabelMap pred = stalab::argmax_labels(probs);
    for (int64_t i = 0; i < end - begin; ++i) {
      stalab::LabelMap p1, g1;
      p1.n = g1.n = 1;
      p1.h = g1.h = pred.h;
      p1.w = g1.w = pred.w;
      const auto lo = static_cast<size_t>(i * pred.h * pred.w);
      const auto hi = static_cast<size_t>((i + 1) * pred.h * pred.w);
      p1.ids.assign(pred.ids.begin() + lo, pred.ids.begin() + hi);
      g1.ids.assign(y.ids.begin() + lo, y.ids.begin() + hi);
      const stalab::ClassScores dsc = stalab::dice_score(p1, g1, k);
      const stalab::ClassScores iou = stalab::iou_score(p1, g1, k);
      char case_id[32];
      std::snprintf(case_id, sizeof(case_id), "%s_%04lld", cfg.eval.split.c_str(),
                    static_cast<long long>(begin + i));
      csv += case_id;
      for (double v : dsc.per_class) csv += ',' + stalab::format_double(v);
      csv += ',' + stalab::format_double(included_mean(dsc.per_class));
      for (double v : iou.per_class) csv += ',' + stalab::format_double(v);
      csv += ',' + stalab::format_double(included_mean(iou.per_class));
      csv += '\n';
      for (int64_t c = 0; c < k; ++c) {
        dsc_sum[static_cast<size_t>(c)] += dsc.per_class[static_cast<size_t>(c)];
        iou_sum[static_cast<size_t>(c)] += iou.per_class[static_cast<size_t>(c)];
      }
      mean_dsc_sum += included_mean(dsc.per_class);
      mean_iou_sum += included_mean(iou.per_class);
    }
  }
  csv += "mean";
  for (double v : dsc_sum) csv += ',' + stalab::format_double(v / static_cast<double>(n));
  csv += ',' + stalab::format_double(mean_dsc_sum / static_cast<double>(n));
  for (double v : iou_sum) csv += ',' + stalab::format_double(v / static_cast<double>(n));
  csv += ',' + stalab::format_double(mean_iou_sum / static_cast<double>(n));
  csv += '\n';

  const std::string csv_path = (fs::path(out) / "eval.csv").string();
  stalab::write_bytes_atomic(csv_path, csv);
  std::printf("split %s: mean DSC %.4f, mean IoU %.4f over %lld cases\n",
              cfg.eval.split.c_str(), mean_dsc_sum / static_cast<double>(n),
              mean_iou_sum / static_cast<double>(n), static_cast<long long>(n));
  std::printf("wrote %s\n", csv_path.c_str());
  return 0;
}

int cmd_dump_activations(const stalab::RunConfig& cfg) {
  need(cfg.has_dump, "dump-activations", "dump");
  need(cfg.has_data, "dump-activations", "data");
  const std::string out = need_output_dir(cfg, "dump-activations");

  auto net = load_net(cfg.dump.checkpoint, "dump-activations");
  const stalab::DatasetOnDisk ds = stalab::load_dataset(cfg.data.dataset_dir);
  const auto& split = pick_split(ds, cfg.dump.split, "dump-activations");
  check_compat(net.cfg, ds, split, "dump-activations");
  if (cfg.dump.num_samples < 2)
    throw stalab::ConfigError("dump-activations: need num_samples >= 2");
  if (static_cast<int64_t>(split.size()) < cfg.dump.num_samples)
    throw stalab::ConfigError("dump-activations: split '" + cfg.dump.split + "' has " +
                              std::to_string(split.size()) + " samples, config wants " +
                              std::to_string(cfg.dump.num_samples));

  const std::vector<stalab::Sample> chunk(split.begin(),
                                          split.begin() + cfg.dump.num_samples);
  auto [x, y] = stalab::make_batch<float>(chunk);
  std::vector<std::string> blocks =
      cfg.dump.blocks.empty() ? all_block_names(net.cfg) : cfg.dump.blocks;
  stalab::CaptureOptions opt;
  opt.max_features = cfg.dump.max_features;
  opt.seed = cfg.seed;
  stalab::ActivationDump dump;
  try {
    dump = stalab::capture_activations(net, x, blocks, opt);
  } catch (const stalab::ValueError& e) {
    throw stalab::ConfigError(std::string("dump-activations: ") + e.what());
  }

  json index;
  index["schema_version"] = 1;
  index["checkpoint"] = cfg.dump.checkpoint;
  index["split"] = cfg.dump.split;
  index["num_samples"] = cfg.dump.num_samples;
  index["max_features"] = cfg.dump.max_features;
  index["seed"] = cfg.seed;
  json entries = json::array();
  for (const auto& blk : dump.blocks) {
    const std::string file = blk.name + ".tns";
    auto t = stalab::Tensor<double>::from_data({blk.samples, blk.features}, blk.values);
    stalab::write_tns((fs::path(out) / file).string(), t);
    json e;
    e["name"] = blk.name;
    e["file"] = file;
    e["samples"] = blk.samples;
    e["features"] = blk.features;
    entries.push_back(e);
  }
  index["blocks"] = entries;
  stalab::write_bytes_atomic((fs::path(out) / "dump.json").string(), index.dump(2) + "\n");
  std::printf("dumped %zu blocks x %lld samples to %s\n", dump.blocks.size(),
              static_cast<long long>(cfg.dump.num_samples), out.c_str());
  return 0;
}

int cmd_analyze_cka(const stalab::RunConfig& cfg) {
  need(cfg.has_cka, "analyze-cka", "cka");
  const std::string out = need_output_dir(cfg, "analyze-cka");
  if (cfg.cka.dump_dir.empty())
    throw stalab::ConfigError("analyze-cka: cka.dump_dir is empty");
  const fs::path dump_dir(cfg.cka.dump_dir);
  if (!fs::exists(dump_dir / "dump.json"))
    throw stalab::ConfigError("analyze-cka: " + cfg.cka.dump_dir + " has no dump.json");
  json index;
  try {
    index = json::parse(stalab::read_bytes((dump_dir / "dump.json").string()));
  } catch (const json::exception& e) {
    throw stalab::ConfigError("analyze-cka: bad dump.json: " + std::string(e.what()));
  }

  stalab::ActivationDump dump;
  try {
    for (const auto& e : index.at("blocks")) {
      stalab::BlockActivations blk;
      blk.name = e.at("name").get<std::string>();
      const auto t =
          stalab::read_tns<double>((dump_dir / e.at("file").get<std::string>()).string());
      blk.samples = t.dim(0);
      blk.features = t.dim(1);
      blk.values = t.data();
      dump.blocks.push_back(std::move(blk));
    }
  } catch (const json::exception& e) {
    throw stalab::ConfigError("analyze-cka: bad dump index: " + std::string(e.what()));
  }
  if (dump.blocks.size() < 2)
    throw stalab::ConfigError("analyze-cka: need at least 2 dumped blocks");

  const stalab::CkaMatrix raw = stalab::block_similarity(dump, cfg.cka.median_bandwidth);
  const std::string csv_path = (fs::path(out) / "cka.csv").string();
  stalab::write_bytes_atomic(csv_path, stalab::cka_csv(raw));

  stalab::CkaMatrix norm = raw;
  stalab::min_max_normalize(norm);
  const std::string pgm_path = (fs::path(out) / "cka.pgm").string();
  stalab::write_pgm(pgm_path, stalab::cka_heatmap(norm));

  std::printf("%lldx%lld block similarity matrix\n", static_cast<long long>(raw.size),
              static_cast<long long>(raw.size));
  if (raw.size >= 4) {
    const stalab::RedundancySummary red = stalab::shallow_redundancy(raw);
    std::printf("shallow-half mean CKA %.4f, deep-half mean CKA %.4f\n", red.shallow,
                red.deep);
  }
  std::printf("wrote %s and %s\n", csv_path.c_str(), pgm_path.c_str());
  return 0;
}

int cmd_flops(const stalab::RunConfig& cfg) {
  need(cfg.has_model, "flops", "model");
  const stalab::FlopsReport report = stalab::flops_model(cfg.model);
  std::fputs(stalab::flops_table(report).c_str(), stdout);
  if (!cfg.output_dir.empty()) {
    const std::string csv_path = (fs::path(cfg.output_dir) / "flops.csv").string();
    stalab::write_bytes_atomic(csv_path, stalab::flops_csv(report));
    std::printf("wrote %s\n", csv_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"super-token attention segmentation lab"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, dump_args, cka_args, flops_args;
  bool poly_per_epoch = false;
  std::vector<int64_t> exclude_classes;

  CLI::App* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
  add_common(gen, gen_args);
  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_args);
  train->add_flag("--poly-per-epoch", poly_per_epoch,
                  "restart the poly decay every epoch");
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a split");
  add_common(eval, eval_args);
  eval->add_option("--exclude-classes", exclude_classes,
                   "classes to drop from the mean scores");
  CLI::App* dump = app.add_subcommand("dump-activations", "save block outputs as tensors");
  add_common(dump, dump_args);
  CLI::App* cka = app.add_subcommand("analyze-cka", "block similarity from a dump");
  add_common(cka, cka_args);
  CLI::App* flops = app.add_subcommand("flops", "analytic cost audit");
  add_common(flops, flops_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    check_thread_env();
    if (gen->parsed()) return cmd_gen_data(load_config(gen_args));
    if (train->parsed()) {
      stalab::RunConfig cfg = load_config(train_args);
      return cmd_train(cfg, poly_per_epoch);
    }
    if (eval->parsed()) return cmd_eval(load_config(eval_args), exclude_classes);
    if (dump->parsed()) return cmd_dump_activations(load_config(dump_args));
    if (cka->parsed()) return cmd_analyze_cka(load_config(cka_args));
    if (flops->parsed()) return cmd_flops(load_config(flops_args));
  } catch (const stalab::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const stalab::TrainDiverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
