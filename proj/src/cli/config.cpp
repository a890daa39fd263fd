#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "neurotoken/cli.hpp"
#include "neurotoken/error.hpp"

#ifndef NEUROTOKEN_DATA_DIR
#define NEUROTOKEN_DATA_DIR "data"
#endif

namespace neurotoken::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& text, const std::string& what) {
  fail(ErrorKind::ConfigError, key + ": cannot read '" + text + "' as " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_value(key, text, "a number");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  bad_value(key, text, "a boolean");
}

enum class KeyKind { Value, Path, Local };

struct Key {
  std::string section;
  std::string name;
  KeyKind kind = KeyKind::Value;
  std::function<void(RunConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string full() const { return section + "." + name; }
};

template <typename V>
using Ref = std::function<V&(RunConfig&)>;

template <typename V>
Key number(std::string section, std::string name, Ref<V> ref) {
  Key k{section, name, KeyKind::Value, {}, {}};
  const std::string full = k.full();
  k.set = [ref, full](RunConfig& c, const std::string& text, const fs::path&) {
    ref(c) = parse_number<V>(full, text);
  };
  k.get = [ref](const RunConfig& c) {
    const V v = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_floating_point_v<V>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  };
  return k;
}

Key boolean(std::string section, std::string name, Ref<bool> ref) {
  Key k{section, name, KeyKind::Value, {}, {}};
  const std::string full = k.full();
  k.set = [ref, full](RunConfig& c, const std::string& text, const fs::path&) { ref(c) = parse_bool(full, text); };
  k.get = [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); };
  return k;
}

Key path(std::string section, std::string name, KeyKind kind, Ref<fs::path> ref) {
  Key k{section, name, kind, {}, {}};
  k.set = [ref](RunConfig& c, const std::string& text, const fs::path& base) {
    const fs::path p(text);
    ref(c) = p.is_absolute() || base.empty() ? p : base / p;
  };
  k.get = [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)).string(); };
  return k;
}

Key list(std::string section, std::string name, Ref<std::vector<std::string>> ref) {
  Key k{section, name, KeyKind::Value, {}, {}};
  k.set = [ref](RunConfig& c, const std::string& text, const fs::path&) { ref(c) = split_list(text); };
  k.get = [ref](const RunConfig& c) { return join_list(ref(const_cast<RunConfig&>(c))); };
  return k;
}

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> r;
    // run
    r.push_back(number<std::uint64_t>("run", "seed", [](RunConfig& c) -> auto& { return c.seed; }));
    {
      auto k = boolean("run", "deterministic", [](RunConfig& c) -> auto& { return c.deterministic; });
      k.kind = KeyKind::Local;
      r.push_back(k);
    }
    {
      auto k = number<int>("run", "threads", [](RunConfig& c) -> auto& { return c.threads; });
      k.kind = KeyKind::Local;
      r.push_back(k);
    }
    r.push_back(path("run", "work_dir", KeyKind::Local, [](RunConfig& c) -> auto& { return c.work_dir; }));

    // synth
    r.push_back(number<int>("synth", "n_subjects", [](RunConfig& c) -> auto& { return c.synth.n_subjects; }));
    r.push_back(number<int>("synth", "n_roi", [](RunConfig& c) -> auto& { return c.synth.n_roi; }));
    r.push_back(number<int>("synth", "n_networks", [](RunConfig& c) -> auto& { return c.synth.n_networks; }));
    r.push_back(number<int>("synth", "t_points", [](RunConfig& c) -> auto& { return c.synth.t_points; }));
    r.push_back(number<double>("synth", "tr", [](RunConfig& c) -> auto& { return c.synth.tr_seconds; }));
    r.push_back(number<int>("synth", "n_sites", [](RunConfig& c) -> auto& { return c.synth.n_sites; }));
    r.push_back(number<double>("synth", "factor_effect", [](RunConfig& c) -> auto& { return c.synth.factor_effect; }));
    r.push_back(
        number<double>("synth", "base_pair_gain", [](RunConfig& c) -> auto& { return c.synth.base_pair_gain; }));
    r.push_back(number<double>("synth", "continuous_target_gain",
                               [](RunConfig& c) -> auto& { return c.synth.continuous_target_gain; }));
    r.push_back(
        number<double>("synth", "target_noise_std", [](RunConfig& c) -> auto& { return c.synth.target_noise_std; }));
    r.push_back(number<double>("synth", "noise_std", [](RunConfig& c) -> auto& { return c.synth.noise_std; }));
    r.push_back(number<double>("synth", "latent_smoothness",
                               [](RunConfig& c) -> auto& { return c.synth.latent_smoothness; }));

    // preprocess
    r.push_back(number<double>("preprocess", "target_tr", [](RunConfig& c) -> auto& { return c.target_tr; }));
    r.push_back(number<int>("preprocess", "target_t", [](RunConfig& c) -> auto& { return c.target_t; }));

    // features
    r.push_back(
        number<double>("features", "graph_density", [](RunConfig& c) -> auto& { return c.features.graph_density; }));
    r.push_back(number<int>("features", "gradient_components",
                            [](RunConfig& c) -> auto& { return c.features.gradient_components; }));
    r.push_back(
        number<double>("features", "gradient_keep", [](RunConfig& c) -> auto& { return c.features.gradient_keep; }));
    r.push_back(number<double>("features", "gradient_alpha",
                               [](RunConfig& c) -> auto& { return c.features.gradient_alpha; }));
    r.push_back(number<double>("features", "band_lo", [](RunConfig& c) -> auto& { return c.features.band_lo; }));
    r.push_back(number<double>("features", "band_hi", [](RunConfig& c) -> auto& { return c.features.band_hi; }));
    r.push_back(number<int>("features", "edge_k", [](RunConfig& c) -> auto& { return c.features.edge_k; }));
    r.push_back(number<int>("features", "ica_max_iterations",
                            [](RunConfig& c) -> auto& { return c.features.ica_max_iterations; }));
    r.push_back(
        number<double>("features", "ica_tolerance", [](RunConfig& c) -> auto& { return c.features.ica_tolerance; }));

    // corpus
    r.push_back(path("corpus", "text_pool", KeyKind::Path, [](RunConfig& c) -> auto& { return c.text_pool; }));
    r.push_back(path("corpus", "prompts", KeyKind::Path, [](RunConfig& c) -> auto& { return c.prompts; }));

    // tokenizer
    r.push_back(number<int>("tokenizer", "patch_size", [](RunConfig& c) -> auto& { return c.tokenizer.patch_size; }));
    r.push_back(number<int>("tokenizer", "embed_dim", [](RunConfig& c) -> auto& { return c.tokenizer.embed_dim; }));
    r.push_back(number<int>("tokenizer", "n_layers", [](RunConfig& c) -> auto& { return c.tokenizer.n_layers; }));
    r.push_back(number<int>("tokenizer", "n_heads", [](RunConfig& c) -> auto& { return c.tokenizer.n_heads; }));
    r.push_back(number<int>("tokenizer", "ffn_dim", [](RunConfig& c) -> auto& { return c.tokenizer.ffn_dim; }));
    r.push_back(
        number<int>("tokenizer", "decoder_hidden", [](RunConfig& c) -> auto& { return c.tokenizer.decoder_hidden; }));
    r.push_back(number<int>("tokenizer", "classifier_hidden",
                            [](RunConfig& c) -> auto& { return c.tokenizer.classifier_hidden; }));
    r.push_back(
        number<int>("tokenizer", "codebook_size", [](RunConfig& c) -> auto& { return c.tokenizer.codebook_size; }));
    r.push_back(number<int>("tokenizer", "max_patches", [](RunConfig& c) -> auto& { return c.tokenizer.max_patches; }));
    r.push_back(
        number<double>("tokenizer", "commit_beta", [](RunConfig& c) -> auto& { return c.tokenizer.commit_beta; }));
    r.push_back(number<double>("tokenizer", "grl_scale", [](RunConfig& c) -> auto& { return c.tokenizer.grl_scale; }));
    r.push_back(
        number<double>("tokenizer", "lambda_domain", [](RunConfig& c) -> auto& { return c.tokenizer.lambda_domain; }));
    r.push_back(
        number<double>("tokenizer", "sigma_temp", [](RunConfig& c) -> auto& { return c.tokenizer.sigma_temp; }));
    {
      Key k{"tokenizer", "contrastive", KeyKind::Value, {}, {}};
      k.set = [](RunConfig& c, const std::string& text, const fs::path&) {
        if (text == "softmax") {
          c.tokenizer.contrastive = tokenizer::ContrastiveKind::Softmax;
        } else if (text == "sigmoid") {
          c.tokenizer.contrastive = tokenizer::ContrastiveKind::Sigmoid;
        } else {
          bad_value("tokenizer.contrastive", text, "softmax or sigmoid");
        }
      };
      k.get = [](const RunConfig& c) {
        return std::string(c.tokenizer.contrastive == tokenizer::ContrastiveKind::Softmax ? "softmax" : "sigmoid");
      };
      r.push_back(k);
    }
    r.push_back(number<int>("tokenizer", "epochs", [](RunConfig& c) -> auto& { return c.stage1.epochs; }));
    r.push_back(number<int>("tokenizer", "batch_size", [](RunConfig& c) -> auto& { return c.stage1.batch_size; }));
    r.push_back(number<double>("tokenizer", "lr", [](RunConfig& c) -> auto& { return c.stage1.lr; }));
    r.push_back(
        number<double>("tokenizer", "weight_decay", [](RunConfig& c) -> auto& { return c.stage1.weight_decay; }));
    r.push_back(number<double>("tokenizer", "classifier_lr_scale",
                               [](RunConfig& c) -> auto& { return c.stage1.classifier_lr_scale; }));
    r.push_back(number<double>("tokenizer", "holdout_fraction",
                               [](RunConfig& c) -> auto& { return c.stage1.holdout_fraction; }));

    // lm
    r.push_back(number<int>("lm", "n_layers", [](RunConfig& c) -> auto& { return c.lm.n_layers; }));
    r.push_back(number<int>("lm", "n_heads", [](RunConfig& c) -> auto& { return c.lm.n_heads; }));
    r.push_back(number<int>("lm", "model_dim", [](RunConfig& c) -> auto& { return c.lm.model_dim; }));
    r.push_back(number<int>("lm", "ffn_dim", [](RunConfig& c) -> auto& { return c.lm.ffn_dim; }));
    r.push_back(number<int>("lm", "context_length", [](RunConfig& c) -> auto& { return c.lm.context_length; }));
    r.push_back(number<int>("lm", "max_steps", [](RunConfig& c) -> auto& { return c.lm.max_steps; }));
    r.push_back(number<int>("lm", "max_rois", [](RunConfig& c) -> auto& { return c.lm.max_rois; }));
    r.push_back(number<double>("lm", "alpha", [](RunConfig& c) -> auto& { return c.lm.alpha; }));
    r.push_back(number<double>("lm", "beta", [](RunConfig& c) -> auto& { return c.lm.beta; }));
    r.push_back(number<int>("lm", "epochs", [](RunConfig& c) -> auto& { return c.stage2.epochs; }));
    r.push_back(number<int>("lm", "batch_size", [](RunConfig& c) -> auto& { return c.stage2.batch_size; }));
    r.push_back(number<double>("lm", "lr", [](RunConfig& c) -> auto& { return c.stage2.lr; }));
    r.push_back(number<double>("lm", "weight_decay", [](RunConfig& c) -> auto& { return c.stage2.weight_decay; }));
    r.push_back(number<int>("lm", "t2t_window", [](RunConfig& c) -> auto& { return c.stage2.t2t_window; }));
    r.push_back(boolean("lm", "use_f2t", [](RunConfig& c) -> auto& { return c.stage2.use_f2t; }));
    r.push_back(boolean("lm", "use_f2f", [](RunConfig& c) -> auto& { return c.stage2.use_f2f; }));
    r.push_back(boolean("lm", "use_t2t", [](RunConfig& c) -> auto& { return c.stage2.use_t2t; }));
    r.push_back(boolean("lm", "init_from_tokenizer", [](RunConfig& c) -> auto& { return c.init_from_tokenizer; }));

    // instruct
    r.push_back(list("instruct", "tasks", [](RunConfig& c) -> auto& { return c.tasks; }));
    {
      Key k{"instruct", "paradigms", KeyKind::Value, {}, {}};
      k.set = [](RunConfig& c, const std::string& text, const fs::path&) {
        c.paradigms.clear();
        for (const auto& name : split_list(text)) {
          try {
            c.paradigms.push_back(evalkit::paradigm_from_string(name));
          } catch (const Error&) {
            bad_value("instruct.paradigms", name, "a paradigm (single_qa, multi_qa, open_ended)");
          }
        }
      };
      k.get = [](const RunConfig& c) {
        std::vector<std::string> names;
        for (auto p : c.paradigms) names.push_back(evalkit::to_string(p));
        return join_list(names);
      };
      r.push_back(k);
    }
    r.push_back(number<int>("instruct", "n_bins", [](RunConfig& c) -> auto& { return c.n_bins; }));
    r.push_back(number<double>("instruct", "train_fraction", [](RunConfig& c) -> auto& { return c.train_fraction; }));
    r.push_back(number<int>("instruct", "k_shot", [](RunConfig& c) -> auto& { return c.k_shot; }));
    r.push_back(number<int>("instruct", "epochs", [](RunConfig& c) -> auto& { return c.stage3.epochs; }));
    r.push_back(number<int>("instruct", "batch_size", [](RunConfig& c) -> auto& { return c.stage3.batch_size; }));
    r.push_back(number<double>("instruct", "lr", [](RunConfig& c) -> auto& { return c.stage3.lr; }));
    r.push_back(
        number<double>("instruct", "weight_decay", [](RunConfig& c) -> auto& { return c.stage3.weight_decay; }));
    r.push_back(boolean("instruct", "lora", [](RunConfig& c) -> auto& { return c.use_lora; }));
    r.push_back(number<int>("instruct", "lora_rank", [](RunConfig& c) -> auto& { return c.lora.rank; }));
    r.push_back(number<double>("instruct", "lora_alpha", [](RunConfig& c) -> auto& { return c.lora.alpha; }));
    r.push_back(list("instruct", "lora_targets", [](RunConfig& c) -> auto& { return c.lora.targets; }));
    r.push_back(boolean("instruct", "lora_train_head", [](RunConfig& c) -> auto& { return c.lora.train_head; }));

    // eval, probe
    r.push_back(number<int>("eval", "max_new", [](RunConfig& c) -> auto& { return c.max_new; }));
    r.push_back(number<double>("probe", "l2", [](RunConfig& c) -> auto& { return c.probe_l2; }));
    return r;
  }();
  return keys;
}

void validate(const RunConfig& c) {
  require(c.threads >= 1, ErrorKind::ConfigError, "run.threads: must be at least 1");
  require(c.synth.n_subjects >= 2, ErrorKind::ConfigError, "synth.n_subjects: must be at least 2");
  require(c.train_fraction > 0.0 && c.train_fraction < 1.0, ErrorKind::ConfigError,
          "instruct.train_fraction: must lie in (0, 1)");
  require(c.n_bins >= 2, ErrorKind::ConfigError, "instruct.n_bins: must be at least 2");
  require(c.k_shot >= 0, ErrorKind::ConfigError, "instruct.k_shot: must be non-negative");
  require(!c.paradigms.empty(), ErrorKind::ConfigError, "instruct.paradigms: empty");
  require(!c.tasks.empty(), ErrorKind::ConfigError, "instruct.tasks: empty");
  for (const auto& t : c.tasks) {
    require(t == "sex" || t == "score", ErrorKind::ConfigError, "instruct.tasks: unknown task '" + t + "'");
  }
  require(std::set<std::string>(c.tasks.begin(), c.tasks.end()).size() == c.tasks.size(), ErrorKind::ConfigError,
          "instruct.tasks: duplicate task");
  for (auto p : c.paradigms) {
    require(p != evalkit::Paradigm::MultiQa || c.tasks.size() >= 2, ErrorKind::ConfigError,
            "instruct.paradigms: multi_qa needs at least two tasks");
  }
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.text_pool = fs::path(NEUROTOKEN_DATA_DIR) / "text_pool.txt";
  c.prompts = fs::path(NEUROTOKEN_DATA_DIR) / "prompts.txt";

  c.stage1.lr = 5e-3;
  c.stage1.classifier_lr_scale = 0.5;

  c.lm.model_dim = 64;
  c.lm.n_layers = 2;
  c.lm.n_heads = 4;
  c.lm.max_steps = 8;
  c.lm.max_rois = 20;
  c.stage2.epochs = 20;
  c.stage2.lr = 1e-3;

  c.tasks = {"sex", "score"};
  c.paradigms = {evalkit::Paradigm::SingleQa, evalkit::Paradigm::MultiQa};
  c.stage3.epochs = 30;
  c.stage3.lr = 1e-3;
  propagate_seed(c);
  return c;
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::ConfigError, "line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c = default_config();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      fail(ErrorKind::ConfigError, section + ": key outside a section");
    }
    for (const auto& [name, value] : body) {
      const auto it = std::find_if(registry().begin(), registry().end(),
                                   [&](const Key& k) { return k.section == section && k.name == name; });
      if (it == registry().end()) fail(ErrorKind::ConfigError, section + "." + name + ": unknown key");
      it->set(c, trim(value.data()), base_dir);
    }
  }
  validate(c);
  propagate_seed(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  require_artifact(path);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

void propagate_seed(RunConfig& c) {
  c.synth.seed = c.seed;
  c.features.seed = c.seed;
  c.tokenizer.seed = c.seed;
  c.stage1.seed = c.seed;
  c.lm.seed = c.seed;
  c.stage2.seed = c.seed;
  c.stage3.seed = c.seed;
}

void apply_environment(RunConfig& c) {
  if (const char* env = std::getenv("NEUROTOKEN_SEED"); env != nullptr && *env != '\0') {
    c.seed = parse_number<std::uint64_t>("NEUROTOKEN_SEED", trim(env));
  }
  propagate_seed(c);
}

std::string to_ini(const RunConfig& c) {
  std::string out, section;
  for (const auto& k : registry()) {
    if (k.section != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + k.section + "]\n";
      section = k.section;
    }
    out += k.name + " = " + k.get(c) + "\n";
  }
  return out;
}

std::string canonical_config(const RunConfig& c) {
  std::string out = "format_version=" + std::to_string(kFormatVersion) + "\n";
  for (const auto& k : registry()) {
    switch (k.kind) {
      case KeyKind::Local:
        break;
      case KeyKind::Path:
        out += k.full() + "#content=" + file_hash(k.get(c)) + "\n";
        break;
      case KeyKind::Value:
        out += k.full() + "=" + k.get(c) + "\n";
        break;
    }
  }
  return out;
}

std::string config_hash(const RunConfig& c) { return hex64(fnv1a(canonical_config(c))); }

std::uint64_t fnv1a(std::string_view data, std::uint64_t h) {
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string file_hash(const fs::path& path) {
  require_artifact(path);
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return hex64(h);
}

// ---- logging ----

void Logger::emit(const std::string& level, const std::string& event, ordered_json fields) const {
  ordered_json line;
  line["level"] = level;
  line["event"] = event;
  for (auto& [k, v] : fields.items()) line[k] = v;
  *out_ << line.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  out_->flush();
}

void Logger::info(const std::string& event, ordered_json fields) const { emit("info", event, std::move(fields)); }

void Logger::warn(const std::string& event, ordered_json fields) const { emit("warn", event, std::move(fields)); }

void Logger::error(const std::string& kind, const std::string& message) const {
  ordered_json line;
  line["level"] = "error";
  line["kind"] = kind;
  line["message"] = message;
  *out_ << line.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  out_->flush();
}

// ---- artifacts ----

ordered_json meta(const RunConfig& c) {
  ordered_json m;
  m["config_hash"] = config_hash(c);
  m["seed"] = c.seed;
  m["format_version"] = kFormatVersion;
  return m;
}

void write_stage_meta(const RunConfig& c, const std::string& stage, const fs::path& dir,
                      const std::vector<std::string>& files) {
  ordered_json j = meta(c);
  j["stage"] = stage;
  ordered_json hashes = ordered_json::object();
  for (const auto& f : files) hashes[f] = file_hash(dir / f);
  j["artifacts"] = hashes;
  std::ofstream out(dir / "meta.json");
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorKind::FormatError, "cannot write " + (dir / "meta.json").string());
}

void require_artifact(const fs::path& path) {
  require(fs::exists(path), ErrorKind::MissingArtifact, path.string());
}

Layout layout(const RunConfig& c) { return Layout{c.work_dir}; }

}  // namespace neurotoken::cli
