#pragma once

// Checkpoints: JSON header (hyperparameters, tensor names and shapes) followed
// by little-endian f64 tensor data in declaration order.

#include "tsnvae/cfil.hpp"
#include "tsnvae/io.hpp"
#include "tsnvae/model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace tsnvae {

inline constexpr std::string_view kCheckpointMagic = "TSNVCKPT";
inline constexpr std::string_view kCfilMagic = "TSNVCFIL";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::vector<std::uint8_t> pack_tensors(std::string_view magic, nlohmann::json header,
                                              const std::vector<std::pair<std::string, const ad::Tensor*>>& params) {
  ByteWriter w;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"shape", t->shape}});
    w.put_f64s(t->data);
  }
  header["tensors"] = std::move(tensors);
  return pack_container(magic, kCheckpointVersion, std::move(header), w.bytes());
}

// Fills `params` (already shaped by construction) from a container.
inline void unpack_tensors(const Container& c, const std::vector<std::pair<std::string, ad::Tensor*>>& params) {
  using K = ContainerError::Kind;
  const auto& tensors = c.header.at("tensors");
  if (tensors.size() != params.size())
    throw ContainerError(K::Malformed, "checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                                           std::to_string(params.size()));
  ByteReader r(c.payload.data(), c.payload.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (tensors[i].at("name").get<std::string>() != name || tensors[i].at("shape").get<ad::Shape>() != t->shape)
      throw ContainerError(K::Malformed, "checkpoint tensor " + std::to_string(i) + " does not match " + name + " " +
                                             ad::shape_str(t->shape));
    r.get_f64s(t->data);
  }
  if (r.remaining() != 0) throw ContainerError(K::Malformed, "checkpoint has unread tensor data");
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const ModelBundle& m) {
  return detail::pack_tensors(kCheckpointMagic, {{"hyperparams", m.hp}}, m.named_parameters());
}

inline ModelBundle decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const Container c = unpack_container(kCheckpointMagic, kCheckpointVersion, bytes);
  HyperParams hp;
  try {
    hp = c.header.at("hyperparams").get<HyperParams>();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerError::Kind::Malformed, std::string("checkpoint header: ") + e.what());
  }
  ModelBundle m = ModelBundle::create(hp, 0);
  detail::unpack_tensors(c, m.named_parameters());
  return m;
}

inline void save_checkpoint(const ModelBundle& m, const std::string& path) { write_file(path, encode_checkpoint(m)); }
inline ModelBundle load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

inline std::vector<std::pair<std::string, ad::Tensor*>> cfil_parameters(CfilParams& p) {
  std::vector<std::pair<std::string, ad::Tensor*>> out;
  p.coarse.collect("coarse", out);
  p.fine.collect("fine", out);
  p.tactile.collect("tactile", out);
  return out;
}

inline std::vector<std::uint8_t> encode_cfil(const CfilParams& p) {
  std::vector<std::pair<std::string, const ad::Tensor*>> params;
  for (auto& [n, t] : cfil_parameters(const_cast<CfilParams&>(p))) params.emplace_back(n, t);
  nlohmann::json h = {{"cfil", p.cfg},
                      {"coarse_in", p.coarse.in()},
                      {"fine_in", p.fine.in()},
                      {"tactile_in", p.tactile.in()}};
  return detail::pack_tensors(kCfilMagic, std::move(h), params);
}

inline CfilParams decode_cfil(const std::vector<std::uint8_t>& bytes) {
  const Container c = unpack_container(kCfilMagic, kCheckpointVersion, bytes);
  CfilParams p;
  try {
    p.cfg = c.header.at("cfil").get<CfilConfig>();
    Rng dummy = make_rng(0);
    p.coarse = make_regressor(c.header.at("coarse_in").get<std::size_t>(), p.cfg, dummy);
    p.fine = make_regressor(c.header.at("fine_in").get<std::size_t>(), p.cfg, dummy);
    p.tactile = make_regressor(c.header.at("tactile_in").get<std::size_t>(), p.cfg, dummy);
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerError::Kind::Malformed, std::string("cfil header: ") + e.what());
  }
  detail::unpack_tensors(c, cfil_parameters(p));
  return p;
}

inline void save_cfil(const CfilParams& p, const std::string& path) { write_file(path, encode_cfil(p)); }
inline CfilParams load_cfil(const std::string& path) { return decode_cfil(read_file(path)); }

}  // namespace tsnvae
