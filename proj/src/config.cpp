#include "gcml/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace gcml {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

int parse_i32(const std::string& v) {
  const auto x = parse_int(v);
  if (x < INT32_MIN || x > INT32_MAX) throw std::invalid_argument("integer out of range: '" + v + "'");
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_i32(trim(item)));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list of integers");
  return out;
}

std::string fmt_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string fmt_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <typename C>
struct Field {
  std::string key;
  std::function<void(C&, const std::string&)> set;
  std::function<std::string(const C&)> get;
};

template <typename C>
using Fields = std::vector<Field<C>>;

struct Line {
  int number;
  std::string key, value;
};

std::vector<Line> split_lines(const std::string& text) {
  std::vector<Line> out;
  std::stringstream ss(text);
  std::string raw;
  int number = 0;
  while (std::getline(ss, raw)) {
    ++number;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(number) + ": missing key");
    out.push_back({number, key, trim(line.substr(eq + 1))});
  }
  return out;
}

template <typename C>
void apply(const Fields<C>& fields, const std::string& text, C& target) {
  for (const auto& line : split_lines(text)) {
    const Field<C>* field = nullptr;
    for (const auto& f : fields)
      if (f.key == line.key) field = &f;
    if (!field) throw ConfigError("line " + std::to_string(line.number) + ": unknown key '" + line.key + "'");
    try {
      field->set(target, line.value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("line " + std::to_string(line.number) + ": bad value for '" + line.key + "': " + e.what());
    }
  }
}

template <typename C>
std::string format(const Fields<C>& fields, const C& source) {
  std::string out;
  for (const auto& f : fields) out += f.key + " = " + f.get(source) + "\n";
  return out;
}

Fields<SyntheticSpec> synthetic_fields(const std::string& prefix) {
  using S = SyntheticSpec;
  return {
      {prefix + "num_classes", [](S& s, const std::string& v) { s.num_classes = parse_i32(v); },
       [](const S& s) { return std::to_string(s.num_classes); }},
      {prefix + "instances_per_class", [](S& s, const std::string& v) { s.instances_per_class = parse_i32(v); },
       [](const S& s) { return std::to_string(s.instances_per_class); }},
      {prefix + "views_per_instance", [](S& s, const std::string& v) { s.views_per_instance = parse_i32(v); },
       [](const S& s) { return std::to_string(s.views_per_instance); }},
      {prefix + "image_size", [](S& s, const std::string& v) { s.image_size = parse_i32(v); },
       [](const S& s) { return std::to_string(s.image_size); }},
      {prefix + "noise_sigma", [](S& s, const std::string& v) { s.noise_sigma = parse_real(v); },
       [](const S& s) { return fmt_real(s.noise_sigma); }},
      {prefix + "jitter_px", [](S& s, const std::string& v) { s.jitter_px = parse_i32(v); },
       [](const S& s) { return std::to_string(s.jitter_px); }},
      {prefix + "seed", [](S& s, const std::string& v) { s.seed = parse_u64(v); },
       [](const S& s) { return std::to_string(s.seed); }},
  };
}

Field<RunConfig> train_shared(const std::string& key,
                              std::function<void(TrainConfig&, const std::string&)> set,
                              std::function<std::string(const TrainConfig&)> get) {
  return {key,
          [set](RunConfig& c, const std::string& v) {
            set(c.classify, v);
            set(c.retrieve, v);
          },
          [get](const RunConfig& c) { return get(c.classify); }};
}

Field<RunConfig> train_phase(const std::string& key, Phase phase,
                             std::function<void(TrainConfig&, const std::string&)> set,
                             std::function<std::string(const TrainConfig&)> get) {
  return {key,
          [phase, set](RunConfig& c, const std::string& v) {
            set(phase == Phase::classify ? c.classify : c.retrieve, v);
          },
          [phase, get](const RunConfig& c) { return get(c.train(phase)); }};
}

Fields<RunConfig> run_fields() {
  using R = RunConfig;
  using T = TrainConfig;
  Fields<R> f = {
      {"model.variant", [](R& c, const std::string& v) { c.model.variant = parse_variant(v); },
       [](const R& c) { return to_string(c.model.variant); }},
      {"model.attention", [](R& c, const std::string& v) { c.model.attention = parse_bool(v); },
       [](const R& c) { return fmt_bool(c.model.attention); }},
      {"model.widths",
       [](R& c, const std::string& v) {
         const auto w = parse_int_list(v);
         c.model.stages.resize(w.size(), StageConfig{c.model.stages.empty() ? 2 : c.model.stages.back().blocks, 1});
         for (std::size_t i = 0; i < w.size(); ++i) c.model.stages[i].base_width = w[i];
       },
       [](const R& c) {
         std::vector<int> w;
         for (const auto& s : c.model.stages) w.push_back(s.base_width);
         return fmt_list(w);
       }},
      {"model.blocks",
       [](R& c, const std::string& v) {
         const auto b = parse_int_list(v);
         c.model.stages.resize(b.size(), StageConfig{1, c.model.stages.empty() ? 32 : c.model.stages.back().base_width});
         for (std::size_t i = 0; i < b.size(); ++i) c.model.stages[i].blocks = b[i];
       },
       [](const R& c) {
         std::vector<int> b;
         for (const auto& s : c.model.stages) b.push_back(s.blocks);
         return fmt_list(b);
       }},
      {"model.embed_dim", [](R& c, const std::string& v) { c.model.embed_dim = parse_i32(v); },
       [](const R& c) { return std::to_string(c.model.embed_dim); }},
      {"model.input_size", [](R& c, const std::string& v) { c.model.input_size = parse_i32(v); },
       [](const R& c) { return std::to_string(c.model.input_size); }},
      {"model.input_channels", [](R& c, const std::string& v) { c.model.input_channels = parse_i32(v); },
       [](const R& c) { return std::to_string(c.model.input_channels); }},
      {"model.num_classes", [](R& c, const std::string& v) { c.model.num_classes = parse_i32(v); },
       [](const R& c) { return std::to_string(c.model.num_classes); }},
      {"model.attention_reduction", [](R& c, const std::string& v) { c.model.attention_reduction = parse_i32(v); },
       [](const R& c) { return std::to_string(c.model.attention_reduction); }},
      {"model.seed", [](R& c, const std::string& v) { c.model.seed = parse_u64(v); },
       [](const R& c) { return std::to_string(c.model.seed); }},

      {"train.phase", [](R& c, const std::string& v) { c.phase = parse_phase(v); },
       [](const R& c) { return to_string(c.phase); }},
      train_shared("train.momentum", [](T& t, const std::string& v) { t.momentum = parse_real(v); },
                   [](const T& t) { return fmt_real(t.momentum); }),
      train_shared("train.batch", [](T& t, const std::string& v) { t.batch_size = parse_i32(v); },
                   [](const T& t) { return std::to_string(t.batch_size); }),
      train_shared("train.margin", [](T& t, const std::string& v) { t.margin = parse_real(v); },
                   [](const T& t) { return fmt_real(t.margin); }),
      train_shared("train.seed", [](T& t, const std::string& v) { t.seed = parse_u64(v); },
                   [](const T& t) { return std::to_string(t.seed); }),
      train_shared("train.rotation_augment",
                   [](T& t, const std::string& v) { t.rotation_augment = parse_bool(v); },
                   [](const T& t) { return fmt_bool(t.rotation_augment); }),
      train_shared("train.views_per_identity",
                   [](T& t, const std::string& v) { t.views_per_identity = parse_i32(v); },
                   [](const T& t) { return std::to_string(t.views_per_identity); }),
      {"train.log_wall_time", [](R& c, const std::string& v) { c.log_wall_time = parse_bool(v); },
       [](const R& c) { return fmt_bool(c.log_wall_time); }},
  };
  for (Phase p : {Phase::classify, Phase::retrieve}) {
    const std::string prefix = "train." + to_string(p) + ".";
    f.push_back(train_phase(prefix + "lr", p, [](T& t, const std::string& v) { t.lr = parse_real(v); },
                            [](const T& t) { return fmt_real(t.lr); }));
    f.push_back(train_phase(prefix + "epochs", p, [](T& t, const std::string& v) { t.epochs = parse_i32(v); },
                            [](const T& t) { return std::to_string(t.epochs); }));
    f.push_back(train_phase(prefix + "split", p,
                            [](T& t, const std::string& v) { t.split_ratio = parse_real(v); },
                            [](const T& t) { return fmt_real(t.split_ratio); }));
  }
  Fields<R> rest = {
      {"data.root", [](R& c, const std::string& v) { c.data_root = v; }, [](const R& c) { return c.data_root; }},
      {"data.manifest", [](R& c, const std::string& v) { c.data_manifest = v; },
       [](const R& c) { return c.data_manifest; }},
      {"data.train_views", [](R& c, const std::string& v) { c.train_views = parse_int_list(v); },
       [](const R& c) { return fmt_list(c.train_views); }},
      {"data.database_view", [](R& c, const std::string& v) { c.database_view = parse_i32(v); },
       [](const R& c) { return std::to_string(c.database_view); }},
      {"data.query_view", [](R& c, const std::string& v) { c.query_view = parse_i32(v); },
       [](const R& c) { return std::to_string(c.query_view); }},
  };
  f.insert(f.end(), rest.begin(), rest.end());
  for (auto& s : synthetic_fields("data.synthetic.")) {
    f.push_back({s.key, [set = s.set](R& c, const std::string& v) { set(c.synthetic, v); },
                 [get = s.get](const R& c) { return get(c.synthetic); }});
  }
  Fields<R> tail = {
      {"eval.n_values", [](R& c, const std::string& v) { c.eval_n_values = parse_int_list(v); },
       [](const R& c) { return fmt_list(c.eval_n_values); }},
      {"eval.seed", [](R& c, const std::string& v) { c.eval_seed = parse_u64(v); },
       [](const R& c) { return std::to_string(c.eval_seed); }},
      {"threads", [](R& c, const std::string& v) { c.threads = parse_i32(v); },
       [](const R& c) { return std::to_string(c.threads); }},
  };
  f.insert(f.end(), tail.begin(), tail.end());
  return f;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ModelConfig RunConfig::default_model() {
  ModelConfig m;
  m.stages = {{2, 8}, {2, 16}, {2, 32}};
  m.input_size = 32;
  return m;
}

void RunConfig::validate() const {
  try {
    model.validate();
    classify.validate();
    retrieve.validate();
    synthetic.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (train_views.empty()) throw ConfigError("data.train_views must not be empty");
  for (int n : eval_n_values)
    if (n < 1) throw ConfigError("eval.n_values entries must be >= 1");
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  apply(run_fields(), text, base);
  base.validate();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return parse_run_config(read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_run_config(const RunConfig& cfg) { return format(run_fields(), cfg); }

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  apply(synthetic_fields(""), text, spec);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  try {
    return parse_synthetic_spec(read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_synthetic_spec(const SyntheticSpec& spec) { return format(synthetic_fields(""), spec); }

std::string method_label(const ModelConfig& model, bool rotation_augment) {
  std::string label = to_string(model.variant);
  if (model.attention) label += "+attention";
  if (rotation_augment) label += "+aug";
  return label;
}

}  // namespace gcml
