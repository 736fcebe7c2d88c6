#pragma once

// Text checkpoint format. One file holds one or more model blocks:
//
//   distilshield-checkpoint 1
//   role classifier
//   classes 4
//   temperature 5
//   layers 2
//   layer 256 64 relu
//   weights
//   <out_dim lines of in_dim decimals>
//   bias
//   <one line of out_dim decimals>
//   ...
//   end
//
// Values are written with 17 significant digits, so reading restores every
// weight bit for bit.

#include <iosfwd>
#include <filesystem>
#include <string>
#include <vector>

#include "distilshield/nn.hpp"

namespace distilshield {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string role = "classifier";  // classifier | encoder | decoder | surrogate | ...
  double temperature = 1.0;         // softmax temperature used in training
  nn::NetworkModel model;
};

/// Shortest-safe decimal form with 17 significant digits.
std::string format_real(double value);
/// Strict parse of a full token; throws FormatError.
double parse_real(const std::string& token);

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
std::vector<Checkpoint> read_checkpoints(std::istream& in);

void save_checkpoints(const std::filesystem::path& path,
                      const std::vector<Checkpoint>& checkpoints);
std::vector<Checkpoint> load_checkpoints(const std::filesystem::path& path);

/// Loads a file that must contain exactly one block.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace distilshield
