#include "distilshield/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <string>

#include "distilshield/errors.hpp"
#include "distilshield/rng.hpp"

namespace distilshield::data {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }

  unsigned char u8() {
    need(1);
    return bytes_[pos_++];
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | bytes_[pos_++];
    return std::bit_cast<double>(v);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(path_.string() + ": truncated IDX file");
  }

  const std::vector<unsigned char>& bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

void put_f64(std::ofstream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (56 - 8 * i));
  out.write(b, 8);
}

// Thickness-`width` stroke masks on a side x side grid.
bool template_pixel(std::size_t label, std::size_t side, std::size_t r, std::size_t c) {
  const std::size_t width = std::max<std::size_t>(2, side / 8);
  const std::size_t lo = (side - width) / 2;
  const auto in_band = [&](std::size_t v) { return v >= lo && v < lo + width; };
  const std::size_t diag = r > c ? r - c : c - r;
  const std::size_t anti = (r + c + 1 > side ? r + c + 1 - side : side - r - c - 1);
  switch (label) {
    case 0: return in_band(r);
    case 1: return in_band(c);
    case 2: return in_band(r) || in_band(c);
    case 3: return 2 * diag < width;
    case 4: return 2 * anti < width;
    case 5: return r < width / 2 + 1 || c < width / 2 + 1 || r + width / 2 + 1 >= side ||
                   c + width / 2 + 1 >= side;
    default: return false;
  }
}

}  // namespace

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw ConsistencyError("dataset has " + std::to_string(images.size()) + " images but " +
                           std::to_string(labels.size()) + " labels");
  }
  if (class_count == 0 && !images.empty()) throw ParameterError("dataset class_count is zero");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != images.front().shape()) {
      throw ShapeError("image " + std::to_string(i) + " has a different shape");
    }
    if (labels[i] >= class_count) {
      throw ParameterError("label " + std::to_string(labels[i]) + " out of range");
    }
    for (const double v : images[i].values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ParameterError("image " + std::to_string(i) + " has a pixel outside [0,1]");
      }
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_count = class_count;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (const std::size_t i : indices) {
    if (i >= size()) throw ParameterError("subset index out of range");
    out.images.push_back(images[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<double> one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw ParameterError("label out of range for one-hot encoding");
  std::vector<double> v(classes, 0.0);
  v[label] = 1.0;
  return v;
}

nn::TrainingSet to_training_set(const Dataset& dataset) {
  nn::TrainingSet set;
  set.inputs.reserve(dataset.size());
  set.targets.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    set.inputs.push_back(dataset.images[i].data());
    set.targets.push_back(one_hot(dataset.labels[i], dataset.class_count));
  }
  return set;
}

void SyntheticSpec::validate() const {
  if (image_side < 4) throw ParameterError("image_side must be at least 4");
  if (class_count < 2) throw ParameterError("class_count must be at least 2");
  if (class_count > kTemplateCount) {
    throw ParameterError("only " + std::to_string(kTemplateCount) +
                         " class templates are available");
  }
  if (samples_per_class == 0) throw ParameterError("samples_per_class must be positive");
  if (!(noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be nonnegative");
}

Tensor class_template(std::size_t label, std::size_t side) {
  if (label >= kTemplateCount) throw ParameterError("no template for label " + std::to_string(label));
  std::vector<double> pixels(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      pixels[r * side + c] = template_pixel(label, side, r, c) ? kForegroundLevel : kBackgroundLevel;
    }
  }
  return Tensor({side, side}, std::move(pixels));
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset out;
  out.class_count = spec.class_count;
  for (std::size_t label = 0; label < spec.class_count; ++label) {
    const Tensor base = class_template(label, spec.image_side);
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      Tensor image = base;
      if (spec.noise_sigma > 0.0) {
        for (double& v : image.values()) {
          v = std::clamp(v + spec.noise_sigma * noise(rng), 0.0, 1.0);
        }
      }
      out.images.push_back(std::move(image));
      out.labels.push_back(label);
    }
  }
  return out;
}

std::vector<std::size_t> split_sizes(std::size_t n, std::span<const double> fractions) {
  if (fractions.empty()) throw ParameterError("split needs at least one fraction");
  double total = 0.0;
  for (const double f : fractions) {
    if (!(f > 0.0)) throw ParameterError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("split fractions must sum to 1");
  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < fractions.size(); ++i) {
    // The 1e-9 absorbs products such as 0.29 * 100 = 28.999999999999996.
    const auto part = static_cast<std::size_t>(std::floor(fractions[i] * static_cast<double>(n) + 1e-9));
    sizes.push_back(std::min(part, n - used));
    used += sizes.back();
  }
  sizes.push_back(n - used);
  return sizes;
}

std::vector<Dataset> split(const Dataset& dataset, std::span<const double> fractions,
                           std::uint64_t seed) {
  const std::vector<std::size_t> sizes = split_sizes(dataset.size(), fractions);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Dataset> parts;
  std::size_t start = 0;
  for (const std::size_t size : sizes) {
    parts.push_back(dataset.subset(std::span(order).subspan(start, size)));
    start += size;
  }
  return parts;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 std::optional<std::size_t> class_count) {
  const std::vector<unsigned char> image_bytes = read_file(images_path);
  const std::vector<unsigned char> label_bytes = read_file(labels_path);
  Reader images(image_bytes, images_path);
  Reader labels(label_bytes, labels_path);

  const std::uint32_t image_magic = images.u32();
  const std::uint32_t type = image_magic >> 8;
  const std::uint32_t rank = image_magic & 0xFF;
  if ((image_magic >> 16) != 0 || (type != 0x08 && type != 0x0E) || rank < 2) {
    throw FormatError(images_path.string() + ": bad IDX image magic");
  }
  const std::uint32_t label_magic = labels.u32();
  if (label_magic != kIdxLabelsU8) throw FormatError(labels_path.string() + ": bad IDX label magic");

  const std::size_t count = images.u32();
  std::vector<std::size_t> shape;
  std::size_t pixels = 1;
  for (std::uint32_t d = 1; d < rank; ++d) {
    shape.push_back(images.u32());
    if (shape.back() == 0) throw FormatError(images_path.string() + ": zero-sized dimension");
    pixels *= shape.back();
  }
  const std::size_t label_count = labels.u32();
  if (label_count != count) {
    throw ConsistencyError("IDX image count " + std::to_string(count) +
                           " does not match label count " + std::to_string(label_count));
  }

  Dataset out;
  out.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> values(pixels);
    for (double& v : values) {
      v = type == 0x08 ? static_cast<double>(images.u8()) / 255.0 : images.f64();
    }
    out.images.emplace_back(shape, std::move(values));
  }
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    out.labels.push_back(labels.u8());
    max_label = std::max(max_label, out.labels.back());
  }
  out.class_count = class_count.value_or(count == 0 ? 0 : max_label + 1);
  out.validate();
  return out;
}

void save_idx(const Dataset& dataset, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path, PixelEncoding encoding) {
  dataset.validate();
  if (dataset.empty()) throw InputError("cannot write an empty dataset to IDX");
  if (dataset.class_count > 256) throw ParameterError("IDX labels hold at most 256 classes");
  const std::vector<std::size_t>& shape = dataset.images.front().shape();

  std::ofstream images(images_path, std::ios::binary);
  if (!images) throw IoError("cannot write " + images_path.string());
  const std::uint32_t type = encoding == PixelEncoding::u8 ? 0x08 : 0x0E;
  put_u32(images, (type << 8) | static_cast<std::uint32_t>(shape.size() + 1));
  put_u32(images, static_cast<std::uint32_t>(dataset.size()));
  for (const std::size_t d : shape) put_u32(images, static_cast<std::uint32_t>(d));
  for (const Tensor& image : dataset.images) {
    for (const double v : image.values()) {
      if (encoding == PixelEncoding::u8) {
        images.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      } else {
        put_f64(images, v);
      }
    }
  }
  if (!images) throw IoError("write failed for " + images_path.string());

  std::ofstream labels(labels_path, std::ios::binary);
  if (!labels) throw IoError("cannot write " + labels_path.string());
  put_u32(labels, kIdxLabelsU8);
  put_u32(labels, static_cast<std::uint32_t>(dataset.size()));
  for (const std::size_t l : dataset.labels) labels.put(static_cast<char>(l));
  if (!labels) throw IoError("write failed for " + labels_path.string());
}

void write_manifest(const std::filesystem::path& path, const Dataset& dataset,
                    std::span<const std::size_t> poisoned_indices) {
  const std::set<std::size_t> poisoned(poisoned_indices.begin(), poisoned_indices.end());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,label,poisoned\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << i << ',' << dataset.labels[i] << ',' << (poisoned.count(i) ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace distilshield::data
