#include "midnet/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "midnet/errors.hpp"

namespace midnet::checkpoint {

namespace {

constexpr uint32_t kMagic = 0x4b434e4du;  // "MNCK"
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated tensor file");
}

}  // namespace

void write_tensor_file(const std::string& path, const TensorFile& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open tensor file for writing: " + path);
  write_pod(out, kMagic);
  write_pod(out, kVersion);
  write_pod(out, static_cast<uint64_t>(tensors.items.size()));
  for (const auto& [name, m] : tensors.items) {
    if (name.size() > 0xffff) throw IoError("tensor name too long: " + name);
    write_pod(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<uint64_t>(m.rows()));
    write_pod(out, static_cast<uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(m.size())));
  }
  if (!out) throw IoError("failed writing tensor file: " + path);
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file: " + path);
  uint32_t magic = 0, version = 0;
  read_pod(in, magic);
  read_pod(in, version);
  if (magic != kMagic) throw IoError("not a tensor file: " + path);
  if (version != kVersion) throw IoError("unsupported tensor file version in " + path);
  uint64_t count = 0;
  read_pod(in, count);
  TensorFile tf;
  tf.items.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    uint16_t len = 0;
    read_pod(in, len);
    std::string name(len, '\0');
    in.read(name.data(), len);
    uint64_t rows = 0, cols = 0;
    read_pod(in, rows);
    read_pod(in, cols);
    if (rows > (1ull << 32) || cols > (1ull << 32)) throw IoError("absurd tensor shape in " + path);
    MatF m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(m.size())));
    if (!in) throw IoError("truncated tensor file: " + path);
    tf.items.emplace_back(std::move(name), std::move(m));
  }
  return tf;
}

namespace {

std::string patch_tensor_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "bank/patch/%04zu", i);
  return buf;
}

}  // namespace

void save(const std::string& dir, const network::NetConfig& net_cfg,
          const trainer::TrainConfig& train_cfg, trainer::TrainState& state) {
  std::filesystem::create_directories(dir);

  TensorFile tf;
  for (network::Parameter<float>* p : state.backbone->parameters()) {
    p->ensure_momentum();
    tf.add("param/" + p->name, p->value);
    tf.add("mom/" + p->name, p->momentum);
  }
  for (const auto& [name, bn] : state.backbone->bn_states()) {
    tf.add("bnmean/" + name, bn->running_mean);
    tf.add("bnvar/" + name, bn->running_var);
  }
  tf.add("bank/shape", state.shape_bank.rows);
  for (size_t i = 0; i < state.patch_banks.shapes.size(); ++i)
    tf.add(patch_tensor_name(i), state.patch_banks.shapes[i]);
  write_tensor_file(dir + "/ckpt.bin", tf);

  config::KeyValues meta;
  meta.set("epoch", std::to_string(state.epoch));
  meta.set("step", std::to_string(state.step));
  meta.set("rng", state.rng.save_state());
  meta.set("net_hash", std::to_string(net_cfg.hash()));
  meta.set("train_hash", std::to_string(train_cfg.hash()));
  meta.set("patch_bank_count", std::to_string(state.patch_banks.shapes.size()));
  config::write_text_file_atomic(dir + "/ckpt.meta", meta.canonical());

  config::write_text_file_atomic(dir + "/net.cfg", net_cfg.to_keyvalues().canonical());
  config::write_text_file_atomic(dir + "/train.cfg", train_cfg.to_keyvalues().canonical());
}

Checkpoint load(const std::string& dir) {
  Checkpoint ck;
  ck.net_config = network::NetConfig::from_keyvalues(config::KeyValues::parse_file(dir + "/net.cfg"));
  ck.train_config =
      trainer::TrainConfig::from_keyvalues(config::KeyValues::parse_file(dir + "/train.cfg"));

  config::KeyValues meta = config::KeyValues::parse_file(dir + "/ckpt.meta");
  if (meta.get_u64("net_hash", 0) != ck.net_config.hash())
    throw ConfigMismatch("checkpoint net config hash does not match net.cfg in " + dir);
  if (meta.get_u64("train_hash", 0) != ck.train_config.hash())
    throw ConfigMismatch("checkpoint train config hash does not match train.cfg in " + dir);
  ck.state.epoch = meta.get_int("epoch", 0);
  ck.state.step = static_cast<int64_t>(meta.get_u64("step", 0));
  ck.state.rng.load_state(meta.get_string("rng"));
  const size_t patch_count = meta.get_u64("patch_bank_count", 0);
  meta.check_all_consumed();

  TensorFile tf = read_tensor_file(dir + "/ckpt.bin");
  size_t used = 0;
  auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                  bool check_shape) -> const MatF& {
    const MatF* m = tf.find(name);
    if (!m) throw ConfigMismatch("checkpoint tensor missing: " + name);
    if (check_shape && (m->rows() != rows || m->cols() != cols))
      throw ConfigMismatch("checkpoint tensor has wrong shape: " + name);
    ++used;
    return *m;
  };

  ck.state.backbone = std::make_unique<network::Backbone<float>>(ck.net_config);
  for (network::Parameter<float>* p : ck.state.backbone->parameters()) {
    p->value = take("param/" + p->name, p->value.rows(), p->value.cols(), true);
    p->momentum = take("mom/" + p->name, p->value.rows(), p->value.cols(), true);
  }
  for (const auto& [name, bn] : ck.state.backbone->bn_states()) {
    bn->running_mean = take("bnmean/" + name, bn->running_mean.rows(), bn->running_mean.cols(), true);
    bn->running_var = take("bnvar/" + name, bn->running_var.rows(), bn->running_var.cols(), true);
  }
  ck.state.shape_bank.rows = take("bank/shape", 0, 0, false);
  if (ck.state.shape_bank.rows.cols() != ck.net_config.shape_feature_dim)
    throw ConfigMismatch("shape bank width does not match the shape feature dimension");
  for (size_t i = 0; i < patch_count; ++i) {
    const MatF& bank = take(patch_tensor_name(i), 0, 0, false);
    if (bank.cols() != ck.net_config.point_feature_dim)
      throw ConfigMismatch("patch bank width does not match the point feature dimension");
    ck.state.patch_banks.shapes.push_back(bank);
  }
  if (used != tf.items.size())
    throw ConfigMismatch("checkpoint holds tensors the config does not expect");
  return ck;
}

}  // namespace midnet::checkpoint
