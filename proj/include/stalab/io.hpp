#pragma once

// File formats and configuration: P5 PGM images, the ".tns" tensor
// container, model checkpoints, the on-disk dataset layout, and strict JSON
// run configuration. All writes go through a temp file plus rename so
// readers never observe partial files.

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stalab/cka.hpp"
#include "stalab/data.hpp"
#include "stalab/model.hpp"
#include "stalab/tensor.hpp"
#include "stalab/train.hpp"

namespace stalab {

// Bad user input: configs, paths, incompatible files. The CLI maps this to
// exit code 2.
struct ConfigError : ValueError {
  explicit ConfigError(const std::string& msg) : ValueError(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shortest decimal form that parses back to the same value.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw IoError("format_double failed");
  return std::string(buf, end);
}

inline void write_bytes_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t get_u32(const std::string& s, size_t at) {
  return static_cast<uint32_t>(static_cast<uint8_t>(s[at])) |
         static_cast<uint32_t>(static_cast<uint8_t>(s[at + 1])) << 8 |
         static_cast<uint32_t>(static_cast<uint8_t>(s[at + 2])) << 16 |
         static_cast<uint32_t>(static_cast<uint8_t>(s[at + 3])) << 24;
}

inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(const std::string& s, size_t at) {
  const uint32_t bits = get_u32(s, at);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u32(out, static_cast<uint32_t>(bits & 0xffffffffull));
  put_u32(out, static_cast<uint32_t>(bits >> 32));
}

inline double get_f64(const std::string& s, size_t at) {
  const uint64_t bits = static_cast<uint64_t>(get_u32(s, at)) |
                        static_cast<uint64_t>(get_u32(s, at + 4)) << 32;
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PGM, binary 8-bit (P5, maxval 255)

struct PgmImage {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> pixels;  // row-major [h][w]
};

inline void write_pgm(const std::string& path, const PgmImage& img) {
  if (img.h < 1 || img.w < 1 ||
      static_cast<int64_t>(img.pixels.size()) != img.h * img.w)
    throw ValueError("write_pgm: " + std::to_string(img.pixels.size()) + " pixels for " +
                     std::to_string(img.w) + "x" + std::to_string(img.h));
  std::string out = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  write_bytes_atomic(path, out);
}

inline PgmImage read_pgm(const std::string& path) {
  const std::string raw = read_bytes(path);
  size_t at = 0;
  auto next_token = [&]() -> std::string {
    while (at < raw.size()) {
      if (raw[at] == '#') {
        while (at < raw.size() && raw[at] != '\n') ++at;
      } else if (std::isspace(static_cast<unsigned char>(raw[at]))) {
        ++at;
      } else {
        break;
      }
    }
    const size_t start = at;
    while (at < raw.size() && !std::isspace(static_cast<unsigned char>(raw[at]))) ++at;
    if (start == at) throw IoError(path + ": truncated PGM header");
    return raw.substr(start, at - start);
  };
  if (next_token() != "P5") throw IoError(path + ": not a binary PGM");
  PgmImage img;
  img.w = std::stoll(next_token());
  img.h = std::stoll(next_token());
  const int64_t maxval = std::stoll(next_token());
  if (maxval != 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
  ++at;  // single whitespace byte after the header
  if (img.w < 1 || img.h < 1) throw IoError(path + ": bad extent");
  const size_t need = static_cast<size_t>(img.h * img.w);
  if (raw.size() - at < need) throw IoError(path + ": truncated pixel data");
  img.pixels.assign(raw.begin() + static_cast<int64_t>(at),
                    raw.begin() + static_cast<int64_t>(at + need));
  return img;
}

// ---------------------------------------------------------------------------
// ".tns" tensor container:
// "TNS1" | u8 dtype (0=f32, 1=f64) | u8 ndim | u32le dims[ndim] | payload

template <typename T>
void write_tns(const std::string& path, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (!t.defined()) throw ValueError("write_tns: undefined tensor");
  if (t.rank() > 255) throw ValueError("write_tns: rank > 255");
  std::string out = "TNS1";
  out.push_back(std::is_same_v<T, float> ? '\0' : '\1');
  out.push_back(static_cast<char>(t.rank()));
  for (int64_t d : t.shape()) {
    if (d < 0 || d > 0xffffffffll) throw ValueError("write_tns: dim out of u32 range");
    detail::put_u32(out, static_cast<uint32_t>(d));
  }
  out.reserve(out.size() + t.data().size() * sizeof(T));
  for (T v : t.data()) {
    if constexpr (std::is_same_v<T, float>)
      detail::put_f32(out, v);
    else
      detail::put_f64(out, v);
  }
  write_bytes_atomic(path, out);
}

template <typename T>
Tensor<T> read_tns(const std::string& path) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  const std::string raw = read_bytes(path);
  if (raw.size() < 6 || raw.compare(0, 4, "TNS1") != 0)
    throw IoError(path + ": not a TNS1 container");
  const uint8_t dtype = static_cast<uint8_t>(raw[4]);
  const uint8_t ndim = static_cast<uint8_t>(raw[5]);
  const uint8_t want = std::is_same_v<T, float> ? 0 : 1;
  if (dtype != want)
    throw IoError(path + ": dtype " + std::to_string(dtype) + ", expected " +
                  std::to_string(want));
  size_t at = 6;
  if (raw.size() < at + 4u * ndim) throw IoError(path + ": truncated dims");
  Shape shape;
  int64_t count = 1;
  for (uint8_t i = 0; i < ndim; ++i, at += 4) {
    shape.push_back(static_cast<int64_t>(detail::get_u32(raw, at)));
    count *= shape.back();
  }
  if (raw.size() - at != static_cast<size_t>(count) * sizeof(T))
    throw IoError(path + ": payload is " + std::to_string(raw.size() - at) + " bytes, want " +
                  std::to_string(static_cast<size_t>(count) * sizeof(T)));
  std::vector<T> data(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i, at += sizeof(T)) {
    if constexpr (std::is_same_v<T, float>)
      data[static_cast<size_t>(i)] = detail::get_f32(raw, at);
    else
      data[static_cast<size_t>(i)] = detail::get_f64(raw, at);
  }
  return Tensor<T>::from_data(shape, std::move(data));
}

// ---------------------------------------------------------------------------
// Run configuration. JSON document with strict key checking: any key the
// schema does not know is an error naming the offending path.

struct DataSpec {
  std::string dataset_dir;
  int64_t extent = 32;
  int64_t num_classes = 3;
  int64_t num_train = 200;
  int64_t num_test = 50;
};

struct EvalSpec {
  std::string checkpoint;
  std::string split = "test";
  int64_t batch_size = 8;
  std::vector<int64_t> exclude_classes;
};

struct DumpSpec {
  std::string checkpoint;
  std::string split = "test";
  int64_t num_samples = 64;
  int64_t max_features = 0;
  std::vector<std::string> blocks;  // empty: every STA block, shallow to deep
};

struct CkaSpec {
  std::string dump_dir;
  bool median_bandwidth = false;
};

struct RunConfig {
  int64_t schema_version = 1;
  uint64_t seed = 1;
  std::string output_dir;
  ModelConfig model;
  TrainConfig train;
  DataSpec data;
  EvalSpec eval;
  DumpSpec dump;
  CkaSpec cka;
  bool has_model = false, has_train = false, has_data = false, has_eval = false,
       has_dump = false, has_cka = false;
  nlohmann::json raw;  // parsed document, echoed into checkpoints
};

namespace detail {

using nlohmann::json;

inline void require_keys(const json& obj, const std::string& path,
                         std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError("config: unknown key " + path + it.key());
  }
}

template <typename V>
void fetch(const json& obj, const std::string& path, const char* key, V& target) {
  if (!obj.contains(key)) return;
  try {
    target = obj.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value at " + path + key);
  }
}

inline void fetch_arr4(const json& obj, const std::string& path, const char* key,
                       std::array<int64_t, 4>& target) {
  if (!obj.contains(key)) return;
  try {
    auto v = obj.at(key).get<std::vector<int64_t>>();
    if (v.size() != 4) throw ConfigError("config: " + path + key + " needs 4 entries");
    std::copy(v.begin(), v.end(), target.begin());
  } catch (const json::exception&) {
    throw ConfigError("config: bad value at " + path + key);
  }
}

}  // namespace detail

inline ModelConfig parse_model_section(const nlohmann::json& m, const std::string& path) {
  using detail::fetch;
  using detail::fetch_arr4;
  detail::require_keys(m, path,
                       {"input_channels", "num_classes", "base_channels", "input_h",
                        "input_w", "sta_layers", "token_sizes", "heads"});
  ModelConfig cfg;
  fetch(m, path, "input_channels", cfg.input_channels);
  fetch(m, path, "num_classes", cfg.num_classes);
  fetch(m, path, "base_channels", cfg.base_channels);
  fetch(m, path, "input_h", cfg.input_h);
  fetch(m, path, "input_w", cfg.input_w);
  fetch_arr4(m, path, "sta_layers", cfg.sta_layers);
  fetch_arr4(m, path, "token_sizes", cfg.token_sizes);
  fetch_arr4(m, path, "heads", cfg.heads);
  return cfg;
}

inline nlohmann::json model_to_json(const ModelConfig& m) {
  nlohmann::json j;
  j["input_channels"] = m.input_channels;
  j["num_classes"] = m.num_classes;
  j["base_channels"] = m.base_channels;
  j["input_h"] = m.input_h;
  j["input_w"] = m.input_w;
  j["sta_layers"] = m.sta_layers;
  j["token_sizes"] = m.token_sizes;
  j["heads"] = m.heads;
  return j;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::fetch;
  using detail::require_keys;
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  require_keys(j, "",
               {"schema_version", "seed", "output_dir", "model", "train", "data", "eval",
                "dump", "cka"});
  if (!j.contains("schema_version")) throw ConfigError("config: schema_version missing");
  RunConfig cfg;
  cfg.raw = j;
  fetch(j, "", "schema_version", cfg.schema_version);
  if (cfg.schema_version != 1)
    throw ConfigError("config: unsupported schema_version " +
                      std::to_string(cfg.schema_version));
  fetch(j, "", "seed", cfg.seed);
  fetch(j, "", "output_dir", cfg.output_dir);

  if (j.contains("model")) {
    cfg.has_model = true;
    cfg.model = parse_model_section(j.at("model"), "model.");
  }
  if (j.contains("train")) {
    cfg.has_train = true;
    const auto& t = j.at("train");
    require_keys(t, "train.",
                 {"epochs", "batch_size", "lr_initial", "schedule", "poly_per_epoch",
                  "momentum", "weight_decay", "w_ce", "w_dice", "dice_eps", "aug_prob"});
    fetch(t, "train.", "epochs", cfg.train.epochs);
    fetch(t, "train.", "batch_size", cfg.train.batch_size);
    fetch(t, "train.", "lr_initial", cfg.train.lr_initial);
    fetch(t, "train.", "poly_per_epoch", cfg.train.poly_per_epoch);
    fetch(t, "train.", "momentum", cfg.train.momentum);
    fetch(t, "train.", "weight_decay", cfg.train.weight_decay);
    fetch(t, "train.", "w_ce", cfg.train.w_ce);
    fetch(t, "train.", "w_dice", cfg.train.w_dice);
    fetch(t, "train.", "dice_eps", cfg.train.dice_eps);
    fetch(t, "train.", "aug_prob", cfg.train.aug_prob);
    if (t.contains("schedule")) {
      std::string s;
      fetch(t, "train.", "schedule", s);
      if (s == "poly")
        cfg.train.schedule = Schedule::poly;
      else if (s == "cosine")
        cfg.train.schedule = Schedule::cosine;
      else
        throw ConfigError("config: bad value at train.schedule");
    }
  }
  if (j.contains("data")) {
    cfg.has_data = true;
    const auto& d = j.at("data");
    require_keys(d, "data.",
                 {"dataset_dir", "extent", "num_classes", "num_train", "num_test"});
    fetch(d, "data.", "dataset_dir", cfg.data.dataset_dir);
    fetch(d, "data.", "extent", cfg.data.extent);
    fetch(d, "data.", "num_classes", cfg.data.num_classes);
    fetch(d, "data.", "num_train", cfg.data.num_train);
    fetch(d, "data.", "num_test", cfg.data.num_test);
  }
  if (j.contains("eval")) {
    cfg.has_eval = true;
    const auto& e = j.at("eval");
    require_keys(e, "eval.", {"checkpoint", "split", "batch_size", "exclude_classes"});
    fetch(e, "eval.", "checkpoint", cfg.eval.checkpoint);
    fetch(e, "eval.", "split", cfg.eval.split);
    fetch(e, "eval.", "batch_size", cfg.eval.batch_size);
    fetch(e, "eval.", "exclude_classes", cfg.eval.exclude_classes);
  }
  if (j.contains("dump")) {
    cfg.has_dump = true;
    const auto& d = j.at("dump");
    require_keys(d, "dump.",
                 {"checkpoint", "split", "num_samples", "max_features", "blocks"});
    fetch(d, "dump.", "checkpoint", cfg.dump.checkpoint);
    fetch(d, "dump.", "split", cfg.dump.split);
    fetch(d, "dump.", "num_samples", cfg.dump.num_samples);
    fetch(d, "dump.", "max_features", cfg.dump.max_features);
    fetch(d, "dump.", "blocks", cfg.dump.blocks);
  }
  if (j.contains("cka")) {
    cfg.has_cka = true;
    const auto& c = j.at("cka");
    require_keys(c, "cka.", {"dump_dir", "median_bandwidth"});
    fetch(c, "cka.", "dump_dir", cfg.cka.dump_dir);
    fetch(c, "cka.", "median_bandwidth", cfg.cka.median_bandwidth);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_bytes(path));
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// Dataset directory: images/*.pgm + masks/*.pgm + dataset.json manifest.

struct DatasetOnDisk {
  int64_t num_classes = 0;
  std::vector<Sample> train, test;
};

inline PgmImage sample_image_pgm(const Sample& s) {
  PgmImage img;
  img.h = s.h;
  img.w = s.w;
  img.pixels.resize(s.image.size());
  for (size_t i = 0; i < s.image.size(); ++i)
    img.pixels[i] = static_cast<uint8_t>(std::lround(s.image[i] * 255.0f));
  return img;
}

inline PgmImage sample_mask_pgm(const Sample& s) {
  PgmImage img;
  img.h = s.h;
  img.w = s.w;
  img.pixels.resize(s.mask.size());
  for (size_t i = 0; i < s.mask.size(); ++i) img.pixels[i] = static_cast<uint8_t>(s.mask[i]);
  return img;
}

inline void save_dataset(const std::string& dir, const std::vector<Sample>& train,
                         const std::vector<Sample>& test, int64_t num_classes) {
  namespace fs = std::filesystem;
  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["num_classes"] = num_classes;
  auto emit = [&](const char* split, const std::vector<Sample>& samples) {
    std::vector<std::string> stems;
    for (size_t i = 0; i < samples.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%s_%04zu", split, i);
      stems.emplace_back(stem);
      write_pgm((fs::path(dir) / "images" / (stems.back() + ".pgm")).string(),
                sample_image_pgm(samples[i]));
      write_pgm((fs::path(dir) / "masks" / (stems.back() + ".pgm")).string(),
                sample_mask_pgm(samples[i]));
    }
    manifest[split] = stems;
  };
  emit("train", train);
  emit("test", test);
  write_bytes_atomic((fs::path(dir) / "dataset.json").string(), manifest.dump(2) + "\n");
}

inline DatasetOnDisk load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::exists(root / "dataset.json"))
    throw ConfigError("dataset: " + dir + " has no dataset.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_bytes((root / "dataset.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset: bad manifest in " + dir + ": " + e.what());
  }
  DatasetOnDisk ds;
  try {
    ds.num_classes = manifest.at("num_classes").get<int64_t>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("dataset: manifest lacks num_classes");
  }
  auto load_split = [&](const char* split, std::vector<Sample>& out) {
    if (!manifest.contains(split)) return;
    for (const auto& stem_j : manifest.at(split)) {
      const std::string stem = stem_j.get<std::string>();
      const PgmImage img = read_pgm((root / "images" / (stem + ".pgm")).string());
      const PgmImage msk = read_pgm((root / "masks" / (stem + ".pgm")).string());
      if (img.h != msk.h || img.w != msk.w)
        throw ConfigError("dataset: " + stem + " image " + std::to_string(img.w) + "x" +
                          std::to_string(img.h) + " vs mask " + std::to_string(msk.w) + "x" +
                          std::to_string(msk.h));
      Sample s;
      s.h = img.h;
      s.w = img.w;
      s.image.resize(img.pixels.size());
      s.mask.resize(msk.pixels.size());
      for (size_t i = 0; i < img.pixels.size(); ++i)
        s.image[i] = static_cast<float>(img.pixels[i]) / 255.0f;
      for (size_t i = 0; i < msk.pixels.size(); ++i) {
        s.mask[i] = msk.pixels[i];
        if (s.mask[i] >= ds.num_classes)
          throw ConfigError("dataset: " + stem + " mask value " + std::to_string(s.mask[i]) +
                            " >= num_classes " + std::to_string(ds.num_classes));
      }
      out.push_back(std::move(s));
    }
  };
  load_split("train", ds.train);
  load_split("test", ds.test);
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoint: "STAU" | u32 version | u32 header length | JSON header |
// concatenated row-major f32 payloads in header order. The header carries the
// registry order, shapes, the config echo, and the training position, so a
// load rebuilds the exact model and a save of that model reproduces the file
// byte for byte.

struct CheckpointMeta {
  int64_t epoch = 0;
  int64_t iteration = 0;
  nlohmann::json config;  // RunConfig document echo
};

template <typename T>
void save_checkpoint(const std::string& path, StaUnet<T>& net, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["dtype"] = "f32";
  header["epoch"] = meta.epoch;
  header["iteration"] = meta.iteration;
  header["model"] = model_to_json(net.cfg);
  header["config"] = meta.config.is_null() ? nlohmann::json::object() : meta.config;
  nlohmann::json params = nlohmann::json::array();
  std::string payload;
  for_each_param(net, [&](const std::string& name, Tensor<T>& p, bool) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = p.shape();
    params.push_back(entry);
    for (T v : p.data()) detail::put_f32(payload, static_cast<float>(to_double(v)));
  });
  header["params"] = params;
  const std::string hj = header.dump();
  std::string out = "STAU";
  detail::put_u32(out, 1);  // version
  detail::put_u32(out, static_cast<uint32_t>(hj.size()));
  out += hj;
  out += payload;
  write_bytes_atomic(path, out);
}

template <typename T>
StaUnet<T> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr) {
  const std::string raw = read_bytes(path);
  if (raw.size() < 12 || raw.compare(0, 4, "STAU") != 0)
    throw ConfigError(path + ": not a checkpoint");
  const uint32_t version = detail::get_u32(raw, 4);
  if (version != 1)
    throw ConfigError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t hlen = detail::get_u32(raw, 8);
  if (raw.size() < 12u + hlen) throw ConfigError(path + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(12, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": bad checkpoint header: " + std::string(e.what()));
  }
  if (!header.contains("model")) throw ConfigError(path + ": checkpoint header lacks model");
  const ModelConfig mc = parse_model_section(header.at("model"), "checkpoint model.");
  StaUnet<T> net = build_model<T>(mc, 0);
  const auto& params = header.at("params");
  size_t at = 12 + hlen;
  size_t idx = 0;
  for_each_param(net, [&](const std::string& name, Tensor<T>& p, bool) {
    if (idx >= params.size())
      throw ConfigError(path + ": checkpoint lists " + std::to_string(params.size()) +
                        " parameters, model wants more");
    const auto& entry = params.at(idx);
    if (entry.at("name").get<std::string>() != name)
      throw ConfigError(path + ": parameter " + std::to_string(idx) + " is " +
                        entry.at("name").get<std::string>() + ", model wants " + name);
    if (entry.at("shape").get<std::vector<int64_t>>() != p.shape())
      throw ConfigError(path + ": shape mismatch for " + name);
    if (raw.size() < at + 4 * p.data().size())
      throw ConfigError(path + ": truncated payload at " + name);
    for (auto& v : p.data()) {
      v = static_cast<T>(detail::get_f32(raw, at));
      at += 4;
    }
    ++idx;
  });
  if (idx != params.size())
    throw ConfigError(path + ": checkpoint lists extra parameters");
  if (at != raw.size()) throw ConfigError(path + ": trailing bytes after payload");
  if (meta_out) {
    meta_out->epoch = header.at("epoch").get<int64_t>();
    meta_out->iteration = header.at("iteration").get<int64_t>();
    meta_out->config = header.at("config");
  }
  return net;
}

// ---------------------------------------------------------------------------
// CSV and heatmap rendering.

inline std::string metrics_csv(const TrainReport& rep) {
  std::string out = "epoch,iter,lr,loss,ce,dice_loss\n";
  for (const auto& r : rep.rows) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.iter) + ',' + format_double(r.lr) +
           ',' + format_double(r.loss) + ',' + format_double(r.ce) + ',' +
           format_double(r.dice) + '\n';
  }
  return out;
}

inline std::string cka_csv(const CkaMatrix& m) {
  std::string out = "block";
  for (const auto& n : m.names) out += ',' + n;
  out += '\n';
  for (int64_t i = 0; i < m.size; ++i) {
    out += m.names[static_cast<size_t>(i)];
    for (int64_t j = 0; j < m.size; ++j) out += ',' + format_double(m.at(i, j));
    out += '\n';
  }
  return out;
}

// Renders a normalized similarity matrix as an 8-bit grayscale image,
// cell_px pixels per matrix cell.
inline PgmImage cka_heatmap(const CkaMatrix& m, int64_t cell_px = 32) {
  if (!m.normalized) throw ValueError("cka_heatmap: matrix must be min-max normalized");
  if (cell_px < 1) throw ValueError("cka_heatmap: cell_px < 1");
  PgmImage img;
  img.h = m.size * cell_px;
  img.w = m.size * cell_px;
  img.pixels.resize(static_cast<size_t>(img.h * img.w));
  for (int64_t r = 0; r < img.h; ++r)
    for (int64_t c = 0; c < img.w; ++c)
      img.pixels[static_cast<size_t>(r * img.w + c)] =
          static_cast<uint8_t>(std::lround(m.at(r / cell_px, c / cell_px) * 255.0));
  return img;
}

}  // namespace stalab
