#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "distilshield/nn.hpp"
#include "distilshield/tensor.hpp"

namespace distilshield::data {

/// Labelled images with pixels in [0, 1] and labels in [0, class_count).
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  std::size_t input_dim() const { return images.empty() ? 0 : images.front().size(); }

  /// Throws ConsistencyError / ShapeError / ParameterError on any broken invariant.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset&) const = default;
};

/// One-hot targets paired with flattened images.
nn::TrainingSet to_training_set(const Dataset& dataset);
std::vector<double> one_hot(std::size_t label, std::size_t classes);

/// Number of built-in class templates.
inline constexpr std::size_t kTemplateCount = 6;
inline constexpr double kBackgroundLevel = 0.1;
inline constexpr double kForegroundLevel = 0.9;

struct SyntheticSpec {
  std::size_t image_side = 16;
  std::size_t class_count = 4;
  std::size_t samples_per_class = 100;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Noise-free template for `label`: horizontal bar, vertical bar, cross,
/// diagonal, anti-diagonal, frame.
Tensor class_template(std::size_t label, std::size_t side);

/// Templates plus seeded Gaussian noise clipped to [0, 1], ordered by class.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Seeded shuffle, then contiguous parts of floor(f_i * N) examples; the
/// remainder goes to the last part.
std::vector<Dataset> split(const Dataset& dataset, std::span<const double> fractions,
                           std::uint64_t seed);
/// Part sizes that split() would produce.
std::vector<std::size_t> split_sizes(std::size_t n, std::span<const double> fractions);

enum class PixelEncoding {
  u8,   // magic 0x00000803, pixel / 255
  f64,  // magic 0x00000E03, raw big-endian doubles (lossless)
};

inline constexpr std::uint32_t kIdxImagesU8 = 0x00000803;
inline constexpr std::uint32_t kIdxImagesF64 = 0x00000E03;
inline constexpr std::uint32_t kIdxLabelsU8 = 0x00000801;

/// Reads big-endian IDX image and label files. Images of rank > 2 (colour
/// channels) are kept as stored and flattened by the networks.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 std::optional<std::size_t> class_count = std::nullopt);

void save_idx(const Dataset& dataset, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path,
              PixelEncoding encoding = PixelEncoding::u8);

/// CSV with columns index,label,poisoned.
void write_manifest(const std::filesystem::path& path, const Dataset& dataset,
                    std::span<const std::size_t> poisoned_indices = {});

}  // namespace distilshield::data
