#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spba {

enum class Arch { linear, mlp, cnn_spectrogram };

const char* to_string(Arch arch);
Arch arch_from_string(const std::string& s);

/// Victim classifier description.
///   linear:          logits = W x + b
///   mlp:             dense + ReLU per entry of `hidden`, then a dense head
///   cnn_spectrogram: input is a (frames x bands) log-mel image; two 3x3
///                    stride-2 valid convolutions with ReLU (channels from
///                    `hidden`), global average pooling, dense head
struct ModelSpec {
  Arch arch = Arch::mlp;
  std::size_t input_dim = 0;
  std::size_t frames = 0;  // cnn only; input_dim == frames * bands
  std::size_t bands = 0;
  std::vector<int> hidden = {64};
  int num_classes = 10;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t parameter_count() const;
};

/// Classifier with all trainable parameters in one flat vector.
class Model {
 public:
  /// Seeded He initialization.
  explicit Model(ModelSpec spec);
  Model(ModelSpec spec, Eigen::VectorXd parameters);

  const ModelSpec& spec() const { return spec_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  /// Rows of `inputs` are samples; returns (batch x C) logits.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
  /// Argmax per row, lowest index on ties.
  std::vector<int> predict(const Eigen::MatrixXd& inputs) const;

  /// Mean cross-entropy over the rows. Writes d(loss)/d(parameters) into
  /// `grad` when it is non-null.
  double loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
              Eigen::VectorXd* grad = nullptr) const;

 private:
  double dense_loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
                    Eigen::VectorXd* grad, Eigen::MatrixXd* logits_out) const;
  double cnn_loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
                  Eigen::VectorXd* grad, Eigen::MatrixXd* logits_out) const;

  ModelSpec spec_;
  Eigen::VectorXd params_;
};

/// Row-wise softmax.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

/// Mean cross-entropy of `logits` against `labels`.
double cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels);

// Checkpoint layout (little-endian):
//   char[8]  magic "SPBACKP1"
//   u32      arch (0 linear, 1 mlp, 2 cnn_spectrogram)
//   u32      num_classes
//   u64      input_dim, frames, bands
//   u32      hidden count, then u32 per hidden entry
//   u64      init_seed
//   u32      epoch
//   u64      parameter count P
//   f64[P]   parameters
struct Checkpoint {
  ModelSpec spec;
  std::uint32_t epoch = 0;
  Eigen::VectorXd parameters;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint32_t epoch);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace spba
