#include "finpilot/config.h"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "finpilot/errors.h"

namespace finpilot {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Drops a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

class ValueParser {
 public:
  ValueParser(const std::string& text, std::string where) : s_(text), where_(std::move(where)) {}

  nlohmann::json parse() {
    nlohmann::json v = value();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected trailing characters");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(where_ + ": " + msg); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  nlohmann::json value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return string();
    if (c == '[') return array();
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return true;
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return false;
    }
    return number();
  }

  nlohmann::json string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) {
        const char e = s_[++pos_];
        out.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
      } else {
        out.push_back(s_[pos_]);
      }
      ++pos_;
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  nlohmann::json array() {
    ++pos_;
    nlohmann::json out = nlohmann::json::array();
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return out;
    }
    while (true) {
      out.push_back(value());
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          return out;
        }
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return out;
      }
      fail("expected ',' or ']' in array");
    }
  }

  nlohmann::json number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == '_')) {
      ++pos_;
    }
    std::string tok = s_.substr(start, pos_ - start);
    std::erase(tok, '_');
    if (tok.empty()) fail("invalid value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
    try {
      std::size_t used = 0;
      if (is_float) {
        const double d = std::stod(tok, &used);
        if (used == tok.size()) return d;
      } else {
        const long long i = std::stoll(tok, &used);
        if (used == tok.size()) {
          if (i >= 0) return static_cast<std::uint64_t>(i);
          return static_cast<std::int64_t>(i);
        }
      }
    } catch (const std::logic_error&) {
    }
    fail("invalid value '" + tok + "'");
  }

  const std::string& s_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::vector<std::string> split_key(const std::string& key, const std::string& where) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string p;
  while (std::getline(ss, p, '.')) {
    p = trim(p);
    if (p.size() >= 2 && p.front() == '"' && p.back() == '"') p = p.substr(1, p.size() - 2);
    if (p.empty()) throw ParseError(where + ": empty key segment in '" + key + "'");
    parts.push_back(p);
  }
  if (parts.empty()) throw ParseError(where + ": empty key");
  return parts;
}

nlohmann::json& descend(nlohmann::json& root, const std::vector<std::string>& path, std::size_t count,
                        const std::string& where) {
  nlohmann::json* node = &root;
  for (std::size_t i = 0; i < count; ++i) {
    nlohmann::json& next = (*node)[path[i]];
    if (next.is_null()) next = nlohmann::json::object();
    if (!next.is_object()) throw ParseError(where + ": '" + path[i] + "' is not a table");
    node = &next;
  }
  return *node;
}

}  // namespace

nlohmann::json parse_toml(const std::string& text, const std::string& origin) {
  nlohmann::json root = nlohmann::json::object();
  std::vector<std::string> section;
  std::set<std::string> seen_sections;
  std::stringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError(where + ": malformed section header");
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (!seen_sections.insert(name).second) throw ParseError(where + ": duplicate section [" + name + "]");
      section = split_key(name, where);
      descend(root, section, section.size(), where);
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
    std::vector<std::string> path = section;
    for (auto& p : split_key(trim(line.substr(0, eq)), where)) path.push_back(p);
    nlohmann::json& table = descend(root, path, path.size() - 1, where);
    if (table.contains(path.back())) throw ParseError(where + ": duplicate key '" + path.back() + "'");
    table[path.back()] = ValueParser(trim(line.substr(eq + 1)), where).parse();
  }
  return root;
}

// ---- experiment config -----------------------------------------------------

namespace {

// Reads known keys from one table and rejects anything else.
class Table {
 public:
  Table(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_null() && !j_.is_object()) throw ConfigError("[" + name_ + "] must be a table");
  }
  ~Table() = default;

  template <typename T>
  void read(const char* key, T& out) {
    used_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("[" + name_ + "] " + key + " has the wrong type");
    }
  }

  void read_doubles(const char* key, std::vector<double>& out) {
    used_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      out = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("[" + name_ + "] " + key + " must be a number or list of numbers");
    }
  }

  nlohmann::json child(const char* key) {
    used_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return nullptr;
    return j_.at(key);
  }

  void finish() const {
    if (j_.is_null()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown key '" + k + "' in [" + name_ + "]");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace

PolicyConfig make_policy_config(const PolicySettings& settings, std::size_t assets, std::uint64_t seed) {
  PolicyConfig c = PolicyConfig::for_assets(assets);
  c.hidden = settings.hidden;
  c.mode = settings.mode;
  c.shared_trunk = settings.shared_trunk;
  c.init_seed = seed;
  c.init_log_std = settings.init_log_std;
  c.init_gain = settings.init_gain;
  c.head_gain = settings.head_gain;
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (data.source != "synthetic" && data.source != "csv") {
    throw ConfigError("data.source must be 'synthetic' or 'csv'");
  }
  if (data.source == "csv" && data.path.empty()) throw ConfigError("data.path is required for csv data");
  if (data.source == "synthetic") data.synthetic.validate();
  if (!(data.train_fraction > 0.0) || !(data.valid_fraction >= 0.0) ||
      data.train_fraction + data.valid_fraction >= 1.0) {
    throw ConfigError("split fractions must leave a non-empty test split");
  }
  if (data.valid_start.empty() != data.test_start.empty()) {
    throw ConfigError("data.valid_start and data.test_start must be given together");
  }
  env.validate();
  if (forecast.model != "ridge" && forecast.model != "context_mean" && forecast.model != "external") {
    throw ConfigError("forecast.model must be ridge, context_mean or external");
  }
  if (forecast.model == "external" && forecast.external_path.empty()) {
    throw ConfigError("forecast.external_path is required for external forecasts");
  }
  if (forecast.cheat_base != "model" && forecast.cheat_base != "context_mean") {
    throw ConfigError("forecast.cheat_base must be 'model' or 'context_mean'");
  }
  if (forecast.context_window < 1) throw ConfigError("forecast.context_window must be >= 1");
  if (!(forecast.ridge_lambda >= 0.0)) throw ConfigError("forecast.ridge_lambda must be >= 0");
  auto check_r2 = [](double r) {
    if (!(r <= 1.0)) throw ConfigError("target R^2 must be <= 1");
  };
  if (forecast.target_r2) check_r2(*forecast.target_r2);
  for (double r : sweep.r2) check_r2(r);
  for (std::size_t h : sweep.horizons) {
    if (h < 1) throw ConfigError("sweep horizons must be >= 1");
  }
  if (pretrain.epochs > 0 && pretrain.batch_size == 0) throw ConfigError("pretrain.batch_size must be > 0");
  if (!(pretrain.gamma >= 0.0 && pretrain.gamma < 1.0)) throw ConfigError("pretrain.gamma must lie in [0, 1)");
  PolicyConfig probe = make_policy_config(policy, 1, 0);
  (void)probe;
  MpcConfig m = mpc;
  m.validate();
  for (Variant v : sweep.variants) mpc.for_variant(v).validate();
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a table");
  ExperimentConfig c;
  Table root(j, "root");

  {
    nlohmann::json dj = root.child("data");
    Table t(dj, "data");
    t.read("source", c.data.source);
    t.read("path", c.data.path);
    t.read("train_fraction", c.data.train_fraction);
    t.read("valid_fraction", c.data.valid_fraction);
    t.read("valid_start", c.data.valid_start);
    t.read("test_start", c.data.test_start);
    std::string norm = "train";
    t.read("normalization", norm);
    if (norm == "train") c.data.normalization = NormalizationMode::train;
    else if (norm == "per_split") c.data.normalization = NormalizationMode::per_split;
    else throw ConfigError("data.normalization must be 'train' or 'per_split'");
    nlohmann::json sj = t.child("synthetic");
    Table s(sj, "data.synthetic");
    auto& syn = c.data.synthetic;
    s.read("assets", syn.assets);
    s.read_doubles("drift", syn.drift);
    s.read_doubles("vol", syn.vol);
    s.read("signal", syn.signal);
    s.read("persistence", syn.persistence);
    s.read("intraday_vol", syn.intraday_vol);
    s.read("dividend_yield", syn.dividend_yield);
    s.read("initial_price", syn.initial_price);
    s.read("length", syn.length);
    s.read("seed", syn.seed);
    s.read("start_date", syn.start_date);
    s.finish();
    t.finish();
  }
  {
    nlohmann::json ej = root.child("env");
    Table t(ej, "env");
    t.read("initial_value", c.env.initial_value);
    t.read("fee_rate", c.env.fee_rate);
    t.finish();
  }
  {
    nlohmann::json pj = root.child("policy");
    Table t(pj, "policy");
    t.read("hidden", c.policy.hidden);
    std::string mode = act_mode_name(c.policy.mode);
    t.read("mode", mode);
    c.policy.mode = parse_act_mode(mode);
    t.read("shared_trunk", c.policy.shared_trunk);
    t.read("init_log_std", c.policy.init_log_std);
    t.read("init_gain", c.policy.init_gain);
    t.read("head_gain", c.policy.head_gain);
    t.finish();
  }
  {
    nlohmann::json pj = root.child("pretrain");
    Table t(pj, "pretrain");
    std::string algo = pretrain_algo_name(c.pretrain.algo);
    t.read("algo", algo);
    c.pretrain.algo = parse_pretrain_algo(algo);
    t.read("epochs", c.pretrain.epochs);
    t.read("batch_size", c.pretrain.batch_size);
    t.read("actor_lr", c.pretrain.actor_lr);
    t.read("critic_lr", c.pretrain.critic_lr);
    t.read("gamma", c.pretrain.gamma);
    t.read("cache_dir", c.pretrain_cache_dir);
    t.finish();
  }
  {
    nlohmann::json fj = root.child("forecast");
    Table t(fj, "forecast");
    t.read("model", c.forecast.model);
    t.read("ridge_lambda", c.forecast.ridge_lambda);
    t.read("external_path", c.forecast.external_path);
    t.read("context_window", c.forecast.context_window);
    double target = 0.0;
    if (!fj.is_null() && fj.contains("target_r2") && !fj.at("target_r2").is_null()) {
      t.read("target_r2", target);
      c.forecast.target_r2 = target;
    } else {
      t.child("target_r2");
    }
    t.read("cheat_base", c.forecast.cheat_base);
    t.finish();
  }
  {
    nlohmann::json mj = root.child("mpc");
    Table t(mj, "mpc");
    auto& m = c.mpc;
    t.read("horizon", m.horizon);
    t.read("particles", m.particles);
    t.read("epochs", m.epochs);
    t.read("step_size", m.step_size);
    t.read("gamma", m.gamma);
    t.read("lambda", m.lambda);
    t.read("sigma", m.sigma);
    t.read("eps_num", m.eps_num);
    std::string variant = variant_name(m.variant);
    t.read("variant", variant);
    m.variant = parse_variant(variant);
    std::string reset = reset_mode_name(m.reset_mode);
    t.read("reset_mode", reset);
    m.reset_mode = parse_reset_mode(reset);
    t.read("normalize_value", m.normalize_value);
    t.finish();
  }
  {
    nlohmann::json xj = root.child("experiment");
    Table t(xj, "experiment");
    t.read("seeds", c.seeds);
    t.read("workers", c.workers);
    t.read("output_dir", c.output_dir);
    t.read("step_reports", c.step_reports);
    t.finish();
  }
  {
    nlohmann::json sj = root.child("sweep");
    Table t(sj, "sweep");
    t.read("horizon", c.sweep.horizons);
    t.read("r2", c.sweep.r2);
    std::vector<std::string> variants;
    t.read("variant", variants);
    for (const auto& v : variants) c.sweep.variants.push_back(parse_variant(v));
    t.finish();
  }
  root.finish();
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  const auto& syn = c.data.synthetic;
  j["data"] = {
      {"source", c.data.source},
      {"path", c.data.path},
      {"train_fraction", c.data.train_fraction},
      {"valid_fraction", c.data.valid_fraction},
      {"valid_start", c.data.valid_start},
      {"test_start", c.data.test_start},
      {"normalization", c.data.normalization == NormalizationMode::train ? "train" : "per_split"},
      {"synthetic",
       {{"assets", syn.assets},
        {"drift", syn.drift},
        {"vol", syn.vol},
        {"signal", syn.signal},
        {"persistence", syn.persistence},
        {"intraday_vol", syn.intraday_vol},
        {"dividend_yield", syn.dividend_yield},
        {"initial_price", syn.initial_price},
        {"length", syn.length},
        {"seed", syn.seed},
        {"start_date", syn.start_date}}},
  };
  j["env"] = {{"initial_value", c.env.initial_value}, {"fee_rate", c.env.fee_rate}};
  j["policy"] = {{"hidden", c.policy.hidden},
                 {"mode", act_mode_name(c.policy.mode)},
                 {"shared_trunk", c.policy.shared_trunk},
                 {"init_log_std", c.policy.init_log_std},
                 {"init_gain", c.policy.init_gain},
                 {"head_gain", c.policy.head_gain}};
  j["pretrain"] = {{"algo", pretrain_algo_name(c.pretrain.algo)},
                   {"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"actor_lr", c.pretrain.actor_lr},
                   {"critic_lr", c.pretrain.critic_lr},
                   {"gamma", c.pretrain.gamma},
                   {"cache_dir", c.pretrain_cache_dir}};
  j["forecast"] = {{"model", c.forecast.model},
                   {"ridge_lambda", c.forecast.ridge_lambda},
                   {"external_path", c.forecast.external_path},
                   {"context_window", c.forecast.context_window},
                   {"target_r2", c.forecast.target_r2 ? nlohmann::json(*c.forecast.target_r2) : nlohmann::json()},
                   {"cheat_base", c.forecast.cheat_base}};
  const auto& m = c.mpc;
  j["mpc"] = {{"horizon", m.horizon},         {"particles", m.particles},
              {"epochs", m.epochs},           {"step_size", m.step_size},
              {"gamma", m.gamma},             {"lambda", m.lambda},
              {"sigma", m.sigma},             {"eps_num", m.eps_num},
              {"variant", variant_name(m.variant)}, {"reset_mode", reset_mode_name(m.reset_mode)},
              {"normalize_value", m.normalize_value}};
  j["experiment"] = {{"seeds", c.seeds},
                     {"workers", c.workers},
                     {"output_dir", c.output_dir},
                     {"step_reports", c.step_reports}};
  std::vector<std::string> variants;
  for (Variant v : c.sweep.variants) variants.emplace_back(variant_name(v));
  j["sweep"] = {{"horizon", c.sweep.horizons}, {"r2", c.sweep.r2}, {"variant", variants}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
  }
  return config_from_json(parse_toml(ss.str(), path.string()));
}

}  // namespace finpilot
