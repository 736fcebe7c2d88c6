#include "distilshield/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "distilshield/errors.hpp"

namespace distilshield {

namespace {

constexpr const char* kMagic = "distilshield-checkpoint";

std::string next_token(std::istream& in, const char* context) {
  std::string token;
  if (!(in >> token)) throw FormatError(std::string("checkpoint truncated while reading ") + context);
  return token;
}

void expect(std::istream& in, const std::string& keyword) {
  const std::string token = next_token(in, keyword.c_str());
  if (token != keyword) {
    throw FormatError("checkpoint: expected '" + keyword + "' but found '" + token + "'");
  }
}

std::size_t parse_count(const std::string& token) {
  std::size_t value = 0;
  const char* first = token.data();
  const char* last = first + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw FormatError("checkpoint: bad integer '" + token + "'");
  return value;
}

void write_row(std::ostream& out, const double* values, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out << ' ';
    out << format_real(values[i]);
  }
  out << '\n';
}

}  // namespace

std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value,
                                       std::chars_format::general, 17);
  if (ec != std::errc()) throw FormatError("cannot format value");
  return std::string(buf, ptr);
}

double parse_real(const std::string& token) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = first + token.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw FormatError("bad real number '" + token + "'");
  return value;
}

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  checkpoint.model.validate();
  out << kMagic << ' ' << kCheckpointVersion << '\n';
  out << "role " << checkpoint.role << '\n';
  out << "classes " << checkpoint.model.output_classes << '\n';
  out << "temperature " << format_real(checkpoint.temperature) << '\n';
  out << "layers " << checkpoint.model.layers.size() << '\n';
  for (const nn::DenseLayer& layer : checkpoint.model.layers) {
    out << "layer " << layer.spec.in_dim << ' ' << layer.spec.out_dim << ' '
        << nn::to_string(layer.spec.activation) << '\n';
    out << "weights\n";
    for (std::size_t r = 0; r < layer.spec.out_dim; ++r) {
      write_row(out, layer.weights.data() + r * layer.spec.in_dim, layer.spec.in_dim);
    }
    out << "bias\n";
    write_row(out, layer.bias.data(), layer.spec.out_dim);
  }
  out << "end\n";
}

std::vector<Checkpoint> read_checkpoints(std::istream& in) {
  std::vector<Checkpoint> blocks;
  std::string token;
  while (in >> token) {
    if (token != kMagic) throw FormatError("checkpoint: bad magic '" + token + "'");
    const std::size_t version = parse_count(next_token(in, "version"));
    if (version != static_cast<std::size_t>(kCheckpointVersion)) {
      throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint cp;
    expect(in, "role");
    cp.role = next_token(in, "role");
    expect(in, "classes");
    cp.model.output_classes = parse_count(next_token(in, "classes"));
    expect(in, "temperature");
    cp.temperature = parse_real(next_token(in, "temperature"));
    expect(in, "layers");
    const std::size_t count = parse_count(next_token(in, "layers"));
    for (std::size_t k = 0; k < count; ++k) {
      expect(in, "layer");
      nn::DenseLayer layer;
      layer.spec.in_dim = parse_count(next_token(in, "in_dim"));
      layer.spec.out_dim = parse_count(next_token(in, "out_dim"));
      try {
        layer.spec.activation = nn::parse_activation(next_token(in, "activation"));
      } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
      }
      expect(in, "weights");
      layer.weights.resize(layer.spec.in_dim * layer.spec.out_dim);
      for (double& w : layer.weights) w = parse_real(next_token(in, "weights"));
      expect(in, "bias");
      layer.bias.resize(layer.spec.out_dim);
      for (double& b : layer.bias) b = parse_real(next_token(in, "bias"));
      cp.model.layers.push_back(std::move(layer));
    }
    expect(in, "end");
    try {
      cp.model.validate();
    } catch (const Error& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
    blocks.push_back(std::move(cp));
  }
  return blocks;
}

void save_checkpoints(const std::filesystem::path& path,
                      const std::vector<Checkpoint>& checkpoints) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Checkpoint& cp : checkpoints) write_checkpoint(out, cp);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Checkpoint> load_checkpoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoints(in);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<Checkpoint> blocks = load_checkpoints(path);
  if (blocks.size() != 1) {
    throw FormatError(path.string() + ": expected one model block, found " +
                      std::to_string(blocks.size()));
  }
  return std::move(blocks.front());
}

}  // namespace distilshield
