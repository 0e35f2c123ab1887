#include "langevinmix/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "langevinmix/oracles.hpp"

namespace lmx {

namespace {

using nlohmann::json;

const json& need(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + "." + key + " is required");
  return j.at(key);
}

double number(const json& j, const std::string& key, const std::string& where) {
  const auto& v = need(j, key, where);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(where + "." + key + " must be finite");
  return x;
}

double positive(const json& j, const std::string& key, const std::string& where) {
  const double x = number(j, key, where);
  if (!(x > 0.0)) throw ConfigError(where + "." + key + " must be positive");
  return x;
}

std::uint64_t count(const json& j, const std::string& key, const std::string& where,
                    std::uint64_t min_value) {
  const auto& v = need(j, key, where);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError(where + "." + key + " must be a nonnegative integer");
  const auto x = v.get<std::uint64_t>();
  if (x < min_value)
    throw ConfigError(where + "." + key + " must be at least " + std::to_string(min_value));
  return x;
}

std::vector<double> vec(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(where + " must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

void only_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(where + "." + it.key() + " is not a recognised key");
  }
}

ModelBlock parse_model(const json& j) {
  if (!j.is_object()) throw ConfigError("model must be an object");
  only_keys(j, {"name", "d", "M", "c", "M_z", "constants"}, "model");
  ModelBlock m;
  const auto& name = need(j, "name", "model");
  if (!name.is_string()) throw ConfigError("model.name must be a string");
  m.name = name.get<std::string>();
  m.d = static_cast<int>(count(j, "d", "model", 1));
  if (m.name == "linear") {
    if (j.contains("M")) m.M = positive(j, "M", "model");
  } else if (m.name == "logistic") {
    m.c = positive(j, "c", "model");
    m.M_z = positive(j, "M_z", "model");
  } else {
    throw ConfigError("model.name must be 'linear' or 'logistic'");
  }
  if (j.contains("constants")) {
    const auto& c = j.at("constants");
    only_keys(c, {"delta", "b", "K", "M"}, "model.constants");
    CertifiedConstants k;
    k.delta = positive(c, "delta", "model.constants");
    k.b = positive(c, "b", "model.constants");
    k.K = positive(c, "K", "model.constants");
    k.M = c.contains("M") ? positive(c, "M", "model.constants") : 0.0;
    m.constants = k;
  }
  return m;
}

ChainBlock parse_chain(const json& j) {
  if (!j.is_object()) throw ConfigError("chain must be an object");
  only_keys(j, {"lambda", "beta", "theta0", "horizon", "replicas", "seed", "allow_out_of_theory"},
            "chain");
  ChainBlock c;
  c.lambda = positive(j, "lambda", "chain");
  if (j.contains("beta")) c.beta = positive(j, "beta", "chain");
  c.theta0 = vec(need(j, "theta0", "chain"), "chain.theta0");
  c.horizon = count(j, "horizon", "chain", 1);
  c.replicas = j.contains("replicas") ? count(j, "replicas", "chain", 1) : 1;
  c.seed = count(j, "seed", "chain", 0);
  if (j.contains("allow_out_of_theory")) {
    if (!j.at("allow_out_of_theory").is_boolean())
      throw ConfigError("chain.allow_out_of_theory must be a boolean");
    c.allow_out_of_theory = j.at("allow_out_of_theory").get<bool>();
  }
  return c;
}

OutputBlock parse_output(const json& j) {
  OutputBlock o;
  if (j.is_null()) return o;
  if (!j.is_object()) throw ConfigError("output must be an object");
  only_keys(j, {"dir", "formats"}, "output");
  if (j.contains("dir")) {
    if (!j.at("dir").is_string()) throw ConfigError("output.dir must be a string");
    o.dir = j.at("dir").get<std::string>();
  }
  if (j.contains("formats")) {
    o.formats.clear();
    for (const auto& f : j.at("formats")) {
      if (!f.is_string() || (f != "json" && f != "csv" && f != "bin"))
        throw ConfigError("output.formats entries must be 'json', 'csv' or 'bin'");
      o.formats.push_back(f.get<std::string>());
    }
  }
  return o;
}

}  // namespace

const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"validate", "constants", "run", "lln",
                                              "clt",      "coupling",  "mixing", "tv"};
  return kinds;
}

DataStream build_stream(const json& j) {
  if (!j.is_object()) throw ConfigError("stream must be an object");
  const auto& kind = need(j, "kind", "stream");
  if (!kind.is_string()) throw ConfigError("stream.kind must be a string");
  const auto k = kind.get<std::string>();
  try {
    if (k == "finite_markov") {
      only_keys(j, {"kind", "states", "P"}, "stream");
      const auto& st = need(j, "states", "stream");
      const auto& P = need(j, "P", "stream");
      if (!st.is_array() || !P.is_array()) throw ConfigError("stream.states and stream.P must be arrays");
      std::vector<std::vector<double>> states;
      for (const auto& s : st) states.push_back(vec(s, "stream.states[]"));
      Matrix mat;
      for (const auto& row : P) mat.push_back(vec(row, "stream.P[]"));
      return DataStream(FiniteMarkovParams::make(std::move(states), std::move(mat)));
    }
    if (k == "iid_bounded") {
      only_keys(j, {"kind", "m", "half_width", "shape"}, "stream");
      IidBoundedParams p;
      p.m = static_cast<int>(count(j, "m", "stream", 1));
      p.half_width = number(j, "half_width", "stream");
      if (j.contains("shape")) {
        const auto s = j.at("shape");
        if (s == "box") p.shape = IidBoundedParams::Shape::box;
        else if (s == "ball") p.shape = IidBoundedParams::Shape::ball;
        else throw ConfigError("stream.shape must be 'box' or 'ball'");
      }
      return DataStream(p);
    }
    if (k == "bounded_moving_average") {
      only_keys(j, {"kind", "m", "window", "half_width", "clamp"}, "stream");
      MovingAverageParams p;
      p.m = static_cast<int>(count(j, "m", "stream", 1));
      p.window = static_cast<int>(count(j, "window", "stream", 1));
      p.half_width = number(j, "half_width", "stream");
      p.clamp = positive(j, "clamp", "stream");
      return DataStream(p);
    }
  } catch (const EnvironmentError& e) {
    throw ConfigError(std::string("stream: ") + e.what());
  }
  throw ConfigError("stream.kind must be finite_markov, iid_bounded or bounded_moving_average");
}

ModelSpec build_model(const ExperimentConfig& cfg, const DataStream& stream) {
  const auto& mb = cfg.model;
  try {
    ModelSpec spec = mb.name == "linear" ? make_linear_model(mb.d, mb.M.value_or(std::max(stream.M(), 1e-12)))
                                         : make_logistic_model(mb.d, mb.c, mb.M_z);
    if (mb.name == "logistic" && stream.finite()) spec = attach_logistic_potential(spec, *stream.finite());
    if (mb.constants) {
      auto k = *mb.constants;
      if (k.M == 0.0) k.M = spec.M();
      spec = spec.with_constants(k);
    }
    spec = spec.with_beta(cfg.chain.beta);
    if (stream.m() != spec.m())
      throw ConfigError("stream dimension " + std::to_string(stream.m()) + " differs from the model's " +
                        std::to_string(spec.m()));
    if (stream.M() > spec.M() * (1.0 + 1e-12))
      throw ConfigError("stream bound M exceeds the bound the model is certified for");
    if (cfg.chain.theta0.size() != static_cast<std::size_t>(spec.d()))
      throw ConfigError("chain.theta0 must have length d");
    return spec;
  } catch (const ModelError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::parse(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  only_keys(j, {"model", "stream", "chain", "experiment", "output", "$schema", "description"}, "config");
  ExperimentConfig c;
  c.raw = j;
  c.model = parse_model(need(j, "model", "config"));
  c.stream = need(j, "stream", "config");
  build_stream(c.stream);
  c.chain = parse_chain(need(j, "chain", "config"));
  c.experiment = need(j, "experiment", "config");
  if (!c.experiment.is_object()) throw ConfigError("experiment must be an object");
  const auto& kind = need(c.experiment, "kind", "experiment");
  if (!kind.is_string()) throw ConfigError("experiment.kind must be a string");
  c.kind = kind.get<std::string>();
  bool known = false;
  for (const auto& k : experiment_kinds()) known = known || k == c.kind;
  if (!known) throw ConfigError("experiment.kind '" + c.kind + "' is not recognised");
  c.output = parse_output(j.contains("output") ? j.at("output") : json());
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse(j);
}

std::string ExperimentConfig::digest() const { return sha256_hex(raw.dump()); }

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t seed) const {
  json j = raw;
  j["chain"]["seed"] = seed;
  return parse(j);
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

}  // namespace lmx
