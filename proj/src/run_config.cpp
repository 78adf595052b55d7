#include "sspcab/run_config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "sspcab/errors.hpp"
#include "sspcab/kv_text.hpp"

namespace sspcab {

namespace {

struct KeySpec {
  const char* key;
  const char* default_value;
  std::function<void(const std::string&)> check;
};

void any(const std::string&) {}
void uint_value(const std::string& v) { parse_uint(v, "value"); }
void positive_uint(const std::string& v) {
  if (parse_uint(v, "value") == 0) throw ConfigError("value must be >= 1");
}
void non_negative(const std::string& v) {
  const double d = parse_double(v, "value");
  if (!(d >= 0.0)) throw ConfigError("value must be >= 0");
}
void positive(const std::string& v) {
  if (!(parse_double(v, "value") > 0.0)) throw ConfigError("value must be > 0");
}
void fraction(const std::string& v) {
  const double d = parse_double(v, "value");
  if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("value must lie in [0, 1], got " + v);
}

const std::vector<KeySpec>& specs() {
  static const std::vector<KeySpec> table = {
      // paths
      {"out", "", any},
      {"manifest", "", any},
      {"checkpoint", "", any},
      {"scores", "", any},
      {"log", "", any},
      {"maps", "", any},
      {"resume", "", any},
      // synthetic corpus
      {"n_train", "500", positive_uint},
      {"n_test", "100", positive_uint},
      {"anomaly_fraction", "0.5", fraction},
      {"seed", "7", uint_value},
      // model
      {"encoder_channels", "16,32,64", [](const std::string& v) { parse_size_list(v, "encoder_channels"); }},
      {"placement", "late", [](const std::string& v) { parse_placement(v); }},
      {"lambda", "0.1", non_negative},
      {"kprime", "1", positive_uint},
      {"dilation", "1", uint_value},
      {"reduction", "8", positive_uint},
      {"loss", "mse", [](const std::string& v) { parse_loss_kind(v); }},
      {"score_mode", "mean", [](const std::string& v) { parse_score_mode(v); }},
      {"w_recon", "1", non_negative},
      {"w_block", "0", non_negative},
      {"normalize", "none",
       [](const std::string& v) {
         if (v != "none" && v != "minmax") throw ConfigError("normalize must be none or minmax");
       }},
      // training
      {"epochs", "20", uint_value},
      {"batch_size", "16", positive_uint},
      {"learning_rate", "0.001", positive},
      {"optimizer", "adam", [](const std::string& v) { parse_optimizer(v); }},
      // gradient checks
      {"gradcheck_seeds", "100", positive_uint},
      {"inject_fault", "", any},
  };
  return table;
}

const KeySpec& spec_for(const std::string& key) {
  for (const auto& s : specs())
    if (key == s.key) return s;
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& s : specs()) entries_[s.key] = Entry{s.default_value, Source::default_value};
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& s : specs()) k.emplace_back(s.key);
    return k;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value, Source source) {
  const KeySpec& spec = spec_for(key);
  try {
    spec.check(value);
  } catch (const ConfigError& e) {
    throw ConfigError("invalid value for '" + key + "': " + e.what());
  }
  Entry& e = entries_[key];
  // A file never overrides a flag.
  if (e.source == Source::flag && source == Source::file) return;
  e = Entry{value, source};
}

void RunConfig::load_text(const std::string& text, const std::string& source_name) {
  for (const auto& kv : parse_key_values(text, source_name)) {
    try {
      set(kv.key, kv.value, Source::file);
    } catch (const ConfigError& e) {
      throw ConfigError(source_name + ":" + std::to_string(kv.line) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second.value;
}

RunConfig::Source RunConfig::source(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second.source;
}

double RunConfig::get_double(const std::string& key) const { return parse_double(get(key), key); }
std::uint64_t RunConfig::get_uint(const std::string& key) const { return parse_uint(get(key), key); }

AeConfig RunConfig::ae_config(std::size_t height, std::size_t width, std::size_t channels) const {
  AeConfig c;
  c.height = height;
  c.width = width;
  c.channels = channels;
  c.encoder_channels = parse_size_list(get("encoder_channels"), "encoder_channels");
  c.placement = parse_placement(get("placement"));
  c.lambda = get_double("lambda");
  c.block.k_prime = get_uint("kprime");
  c.block.dilation = get_uint("dilation");
  c.block.reduction = get_uint("reduction");
  c.block.loss = parse_loss_kind(get("loss"));
  c.score_mode = parse_score_mode(get("score_mode"));
  c.w_recon = get_double("w_recon");
  c.w_block = get_double("w_block");
  c.validate();
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = get_uint("epochs");
  t.batch_size = get_uint("batch_size");
  t.learning_rate = get_double("learning_rate");
  t.optimizer = parse_optimizer(get("optimizer"));
  t.seed = get_uint("seed");
  t.validate();
  return t;
}

std::string RunConfig::dump() const {
  std::string s;
  for (const auto& k : known_keys()) s += k + "=" + get(k) + "\n";
  return s;
}

}  // namespace sspcab
