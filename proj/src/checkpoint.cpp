#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "finpilot/errors.h"
#include "finpilot/policy.h"

namespace finpilot {

namespace {

constexpr char kMagic[4] = {'F', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw IoError("truncated checkpoint");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

std::string policy_config_json(const PolicyConfig& c) {
  nlohmann::json j;
  j["input_dim"] = c.input_dim;
  j["action_dim"] = c.action_dim;
  j["hidden"] = c.hidden;
  j["activation"] = c.activation;
  j["mode"] = act_mode_name(c.mode);
  j["shared_trunk"] = c.shared_trunk;
  j["init_seed"] = c.init_seed;
  j["init_log_std"] = c.init_log_std;
  j["init_gain"] = c.init_gain;
  j["head_gain"] = c.head_gain;
  j["init_scheme"] = "scaled_normal";
  return j.dump();
}

PolicyConfig policy_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    PolicyConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.action_dim = j.at("action_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.activation = j.at("activation").get<std::string>();
    c.mode = parse_act_mode(j.at("mode").get<std::string>());
    c.shared_trunk = j.at("shared_trunk").get<bool>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.init_log_std = j.at("init_log_std").get<double>();
    c.init_gain = j.at("init_gain").get<double>();
    c.head_gain = j.at("head_gain").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("policy config: ") + e.what());
  }
}

PolicySnapshot checkpoint(const ActorCritic& policy) {
  return {policy.config(), policy.params().flat()};
}

void restore(ActorCritic& policy, const PolicySnapshot& snapshot) {
  if (!policy.config().same_architecture(snapshot.config) ||
      snapshot.flat.size() != policy.params().size()) {
    throw ShapeError("snapshot architecture does not match policy");
  }
  policy.params().assign_flat(snapshot.flat);
}

ActorCritic policy_from_snapshot(const PolicySnapshot& snapshot) {
  PolicyParams params(snapshot.config);
  params.assign_flat(snapshot.flat);
  return ActorCritic(snapshot.config, std::move(params));
}

void save_checkpoint(const std::filesystem::path& path, const PolicySnapshot& snapshot) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string config = policy_config_json(snapshot.config);
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put_le<std::uint64_t>(out, snapshot.flat.size());
  for (double v : snapshot.flat) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

PolicySnapshot load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError(path.string() + ": not a policy checkpoint");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = get_le<std::uint32_t>(in);
  std::string config(config_len, '\0');
  in.read(config.data(), config_len);
  if (!in) throw IoError("truncated checkpoint");
  PolicySnapshot snap;
  snap.config = policy_config_from_json(config);
  const auto count = get_le<std::uint64_t>(in);
  if (count != PolicyParams(snap.config).size()) {
    throw ShapeError(path.string() + ": parameter count does not match the stored architecture");
  }
  snap.flat.resize(count);
  for (auto& v : snap.flat) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return snap;
}

}  // namespace finpilot
