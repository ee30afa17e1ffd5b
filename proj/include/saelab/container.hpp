#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "saelab/datagen.hpp"
#include "saelab/sae.hpp"

namespace saelab {

// "SAEC" container layout (all integers little-endian, payload f32):
//
//   magic "SAEC" | version u32 | role u8 | m u32 | d u32 | n u32
//
//   role 0 dictionary: m*d f32, column-major.
//   role 1 dataset:    m*n f32 samples, column-major; when d > 0 a sparse code
//                      section follows with, per sample, k u16 then k pairs
//                      (index u32, value f32). d = 0 marks a code-less dataset.
//   role 2 model:      d = d_sae, n = 0, then arch u8, the ArchParams block
//                      (k u32, ema_threshold f32, ema_decay f32, ema_init u8,
//                      sparsity_coeff f32, p_current f32, p_end f32, lambda_s f32,
//                      anneal_interval u32, target_l0 f32, bandwidth f32,
//                      initial_threshold f32), then W_enc (d x m), b_enc (d),
//                      W_dec (m x d), b_dec (m); Gated appends r_mag (d) and
//                      b_gate (d), JumpReLU appends thresholds (d).

inline constexpr std::uint32_t kContainerVersion = 1;

enum class Role : std::uint8_t { Dictionary = 0, Dataset = 1, Model = 2 };

/// Malformed container; `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset);
  std::size_t offset;
};

struct ContainerHeader {
  std::uint32_t version = kContainerVersion;
  Role role = Role::Dictionary;
  std::uint32_t m = 0, d = 0, n = 0;
};

ContainerHeader read_header(const std::filesystem::path& path);

void write_dictionary(const std::filesystem::path& path, const Dictionary& dict);
Dictionary read_dictionary(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& path, const Dataset& data);
/// cluster_of_sample is not stored and comes back empty.
Dataset read_dataset(const std::filesystem::path& path);

void write_model(const std::filesystem::path& path, const SaeModel& model);
SaeModel read_model(const std::filesystem::path& path);

/// Raw little-endian f32, column-major with `m` rows. Rejects empty files and
/// sizes not divisible by 4*m.
Dataset ingest_activations(const std::filesystem::path& path, std::size_t m);
void write_raw_activations(const std::filesystem::path& path, const Eigen::MatrixXd& x);

}  // namespace saelab
