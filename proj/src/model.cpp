#include "spba/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "spba/error.hpp"
#include "spba/rng.hpp"

namespace spba {

const char* to_string(Arch arch) {
  switch (arch) {
    case Arch::linear: return "linear";
    case Arch::mlp: return "mlp";
    case Arch::cnn_spectrogram: return "cnn_spectrogram";
  }
  return "mlp";
}

Arch arch_from_string(const std::string& s) {
  if (s == "linear") return Arch::linear;
  if (s == "mlp") return Arch::mlp;
  if (s == "cnn_spectrogram") return Arch::cnn_spectrogram;
  config_error("unknown model arch '" + s + "'");
}

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kStride = 2;

std::size_t conv_out(std::size_t n) { return n < kKernel ? 0 : (n - kKernel) / kStride + 1; }

std::vector<std::size_t> dense_dims(const ModelSpec& s) {
  std::vector<std::size_t> dims{s.input_dim};
  if (s.arch == Arch::mlp) {
    for (int h : s.hidden) dims.push_back(static_cast<std::size_t>(h));
  }
  dims.push_back(static_cast<std::size_t>(s.num_classes));
  return dims;
}

struct CnnShape {
  std::size_t h, w, c1, c2, h1, w1, h2, w2, classes;
  std::size_t w1_off, b1_off, w2_off, b2_off, wh_off, bh_off, total;
};

CnnShape cnn_shape(const ModelSpec& s) {
  CnnShape c{};
  c.h = s.frames;
  c.w = s.bands;
  c.c1 = static_cast<std::size_t>(s.hidden.at(0));
  c.c2 = static_cast<std::size_t>(s.hidden.at(1));
  c.h1 = conv_out(c.h);
  c.w1 = conv_out(c.w);
  c.h2 = conv_out(c.h1);
  c.w2 = conv_out(c.w1);
  c.classes = static_cast<std::size_t>(s.num_classes);
  c.w1_off = 0;
  c.b1_off = c.w1_off + c.c1 * kKernel * kKernel;
  c.w2_off = c.b1_off + c.c1;
  c.b2_off = c.w2_off + c.c2 * c.c1 * kKernel * kKernel;
  c.wh_off = c.b2_off + c.c2;
  c.bh_off = c.wh_off + c.classes * c.c2;
  c.total = c.bh_off + c.classes;
  return c;
}

}  // namespace

void ModelSpec::validate() const {
  if (num_classes < 2) config_error("model: num_classes must be >= 2");
  for (int h : hidden) {
    if (h <= 0) config_error("model: hidden sizes must be positive");
  }
  switch (arch) {
    case Arch::linear:
    case Arch::mlp:
      if (input_dim == 0) config_error("model: input_dim must be > 0");
      if (arch == Arch::mlp && (hidden.empty() || hidden.size() > 2)) {
        config_error("model: mlp takes 1 or 2 hidden layers");
      }
      break;
    case Arch::cnn_spectrogram:
      if (hidden.size() != 2) config_error("model: cnn_spectrogram needs 2 conv channel counts");
      if (frames * bands != input_dim) config_error("model: input_dim must equal frames * bands");
      if (conv_out(conv_out(frames)) == 0 || conv_out(conv_out(bands)) == 0) {
        config_error("model: spectrogram too small for two stride-2 3x3 convolutions");
      }
      break;
  }
}

std::size_t ModelSpec::parameter_count() const {
  if (arch == Arch::cnn_spectrogram) return cnn_shape(*this).total;
  const auto dims = dense_dims(*this);
  std::size_t p = 0;
  for (std::size_t l = 1; l < dims.size(); ++l) p += dims[l] * dims[l - 1] + dims[l];
  return p;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.parameter_count()));
  Rng rng(spec_.init_seed);
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in, bool relu) {
    std::normal_distribution<double> normal(0.0, std::sqrt((relu ? 2.0 : 1.0) / fan_in));
    for (std::size_t i = 0; i < count; ++i) params_(static_cast<Eigen::Index>(offset + i)) = normal(rng);
  };
  if (spec_.arch == Arch::cnn_spectrogram) {
    const auto c = cnn_shape(spec_);
    fill(c.w1_off, c.c1 * 9, 9, true);
    fill(c.w2_off, c.c2 * c.c1 * 9, c.c1 * 9, true);
    fill(c.wh_off, c.classes * c.c2, c.c2, false);
    return;
  }
  const auto dims = dense_dims(spec_);
  std::size_t offset = 0;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    const bool last = l + 1 == dims.size();
    fill(offset, dims[l] * dims[l - 1], dims[l - 1], !last);
    offset += dims[l] * dims[l - 1] + dims[l];
  }
}

Model::Model(ModelSpec spec, Eigen::VectorXd parameters)
    : spec_(std::move(spec)), params_(std::move(parameters)) {
  spec_.validate();
  if (static_cast<std::size_t>(params_.size()) != spec_.parameter_count()) {
    data_error("model: parameter vector has " + std::to_string(params_.size()) + " entries, expected " +
               std::to_string(spec_.parameter_count()));
  }
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

namespace {

void check_inputs(const ModelSpec& spec, const Eigen::MatrixXd& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_dim) {
    data_error("model expects inputs of dimension " + std::to_string(spec.input_dim) + ", got " +
               std::to_string(inputs.cols()));
  }
}

}  // namespace

Eigen::MatrixXd Model::forward(const Eigen::MatrixXd& inputs) const {
  check_inputs(spec_, inputs);
  Eigen::MatrixXd logits;
  if (spec_.arch == Arch::cnn_spectrogram) {
    cnn_loss(inputs, {}, nullptr, &logits);
  } else {
    dense_loss(inputs, {}, nullptr, &logits);
  }
  return logits;
}

std::vector<int> Model::predict(const Eigen::MatrixXd& inputs) const {
  const Eigen::MatrixXd logits = forward(inputs);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double Model::loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
                   Eigen::VectorXd* grad) const {
  check_inputs(spec_, inputs);
  if (labels.size() != static_cast<std::size_t>(inputs.rows()) || labels.empty()) {
    data_error("model loss: label count does not match batch");
  }
  for (int y : labels) {
    if (y < 0 || y >= spec_.num_classes) data_error("model loss: label out of range");
  }
  return spec_.arch == Arch::cnn_spectrogram ? cnn_loss(inputs, labels, grad, nullptr)
                                             : dense_loss(inputs, labels, grad, nullptr);
}

double Model::dense_loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
                         Eigen::VectorXd* grad, Eigen::MatrixXd* logits_out) const {
  using Map = Eigen::Map<const Eigen::MatrixXd>;
  using VMap = Eigen::Map<const Eigen::VectorXd>;
  const auto dims = dense_dims(spec_);
  const std::size_t layers = dims.size() - 1;
  std::vector<std::size_t> offsets(layers);
  for (std::size_t l = 0, off = 0; l < layers; ++l) {
    offsets[l] = off;
    off += dims[l + 1] * dims[l] + dims[l + 1];
  }
  auto weight = [&](std::size_t l) {
    return Map(params_.data() + offsets[l], static_cast<Eigen::Index>(dims[l + 1]),
               static_cast<Eigen::Index>(dims[l]));
  };
  auto bias = [&](std::size_t l) {
    return VMap(params_.data() + offsets[l] + dims[l + 1] * dims[l],
                static_cast<Eigen::Index>(dims[l + 1]));
  };

  // activations[l] is the input to layer l; pre[l] its pre-activation output.
  std::vector<Eigen::MatrixXd> activations(layers + 1);
  std::vector<Eigen::MatrixXd> pre(layers);
  activations[0] = inputs;
  for (std::size_t l = 0; l < layers; ++l) {
    pre[l] = activations[l] * weight(l).transpose();
    pre[l].rowwise() += bias(l).transpose();
    activations[l + 1] = (l + 1 == layers) ? pre[l] : Eigen::MatrixXd(pre[l].cwiseMax(0.0));
  }
  const Eigen::MatrixXd& logits = activations[layers];
  if (logits_out) {
    *logits_out = logits;
    return 0.0;
  }
  const double value = cross_entropy(logits, labels);
  if (!grad) return value;

  const auto n = static_cast<double>(inputs.rows());
  grad->setZero(params_.size());
  Eigen::MatrixXd delta = softmax(logits);
  for (Eigen::Index i = 0; i < delta.rows(); ++i) delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  delta /= n;
  for (std::size_t l = layers; l-- > 0;) {
    Eigen::Map<Eigen::MatrixXd> dw(grad->data() + offsets[l], static_cast<Eigen::Index>(dims[l + 1]),
                                   static_cast<Eigen::Index>(dims[l]));
    Eigen::Map<Eigen::VectorXd> db(grad->data() + offsets[l] + dims[l + 1] * dims[l],
                                   static_cast<Eigen::Index>(dims[l + 1]));
    dw.noalias() = delta.transpose() * activations[l];
    db = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * weight(l);
      delta = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return value;
}

double Model::cnn_loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
                       Eigen::VectorXd* grad, Eigen::MatrixXd* logits_out) const {
  const auto c = cnn_shape(spec_);
  const double* p = params_.data();
  const std::size_t n = static_cast<std::size_t>(inputs.rows());
  const bool want_grad = grad != nullptr && logits_out == nullptr;
  if (want_grad) grad->setZero(params_.size());
  double* g = want_grad ? grad->data() : nullptr;

  Eigen::MatrixXd logits(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c.classes));
  std::vector<double> x(c.h * c.w), z1(c.c1 * c.h1 * c.w1), z2(c.c2 * c.h2 * c.w2), pooled(c.c2);
  std::vector<double> dz1, dz2, probs(c.classes);
  const double pool_norm = 1.0 / static_cast<double>(c.h2 * c.w2);
  double total = 0.0;

  auto i1 = [&](std::size_t ch, std::size_t i, std::size_t j) { return (ch * c.h1 + i) * c.w1 + j; };
  auto i2 = [&](std::size_t ch, std::size_t i, std::size_t j) { return (ch * c.h2 + i) * c.w2 + j; };
  auto w2i = [&](std::size_t o, std::size_t ch, std::size_t ky, std::size_t kx) {
    return c.w2_off + ((o * c.c1 + ch) * kKernel + ky) * kKernel + kx;
  };

  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = inputs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
    // conv1 (pre-activation in z1)
    for (std::size_t ch = 0; ch < c.c1; ++ch) {
      for (std::size_t i = 0; i < c.h1; ++i) {
        for (std::size_t j = 0; j < c.w1; ++j) {
          double acc = p[c.b1_off + ch];
          for (std::size_t ky = 0; ky < kKernel; ++ky) {
            for (std::size_t kx = 0; kx < kKernel; ++kx) {
              acc += p[c.w1_off + (ch * kKernel + ky) * kKernel + kx] *
                     x[(kStride * i + ky) * c.w + kStride * j + kx];
            }
          }
          z1[i1(ch, i, j)] = acc;
        }
      }
    }
    // conv2 over relu(z1)
    for (std::size_t o = 0; o < c.c2; ++o) {
      double sum = 0.0;
      for (std::size_t i = 0; i < c.h2; ++i) {
        for (std::size_t j = 0; j < c.w2; ++j) {
          double acc = p[c.b2_off + o];
          for (std::size_t ch = 0; ch < c.c1; ++ch) {
            for (std::size_t ky = 0; ky < kKernel; ++ky) {
              for (std::size_t kx = 0; kx < kKernel; ++kx) {
                const double a = z1[i1(ch, kStride * i + ky, kStride * j + kx)];
                if (a > 0.0) acc += p[w2i(o, ch, ky, kx)] * a;
              }
            }
          }
          z2[i2(o, i, j)] = acc;
          if (acc > 0.0) sum += acc;
        }
      }
      pooled[o] = sum * pool_norm;
    }
    for (std::size_t k = 0; k < c.classes; ++k) {
      double acc = p[c.bh_off + k];
      for (std::size_t o = 0; o < c.c2; ++o) acc += p[c.wh_off + o * c.classes + k] * pooled[o];
      logits(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = acc;
    }
    if (logits_out) continue;

    const auto row = logits.row(static_cast<Eigen::Index>(s));
    const double m = row.maxCoeff();
    double z = 0.0;
    for (std::size_t k = 0; k < c.classes; ++k) z += std::exp(row(static_cast<Eigen::Index>(k)) - m);
    const int y = labels[s];
    total += m + std::log(z) - row(y);
    if (!want_grad) continue;

    // Backward pass.
    for (std::size_t k = 0; k < c.classes; ++k) {
      probs[k] = std::exp(row(static_cast<Eigen::Index>(k)) - m) / z;
    }
    probs[static_cast<std::size_t>(y)] -= 1.0;
    for (auto& v : probs) v /= static_cast<double>(n);
    std::vector<double> dpooled(c.c2, 0.0);
    for (std::size_t k = 0; k < c.classes; ++k) {
      g[c.bh_off + k] += probs[k];
      for (std::size_t o = 0; o < c.c2; ++o) {
        g[c.wh_off + o * c.classes + k] += probs[k] * pooled[o];
        dpooled[o] += probs[k] * p[c.wh_off + o * c.classes + k];
      }
    }
    dz2.assign(z2.size(), 0.0);
    dz1.assign(z1.size(), 0.0);
    for (std::size_t o = 0; o < c.c2; ++o) {
      for (std::size_t i = 0; i < c.h2; ++i) {
        for (std::size_t j = 0; j < c.w2; ++j) {
          if (z2[i2(o, i, j)] <= 0.0) continue;
          const double d = dpooled[o] * pool_norm;
          g[c.b2_off + o] += d;
          for (std::size_t ch = 0; ch < c.c1; ++ch) {
            for (std::size_t ky = 0; ky < kKernel; ++ky) {
              for (std::size_t kx = 0; kx < kKernel; ++kx) {
                const std::size_t src = i1(ch, kStride * i + ky, kStride * j + kx);
                if (z1[src] <= 0.0) continue;
                g[w2i(o, ch, ky, kx)] += d * z1[src];
                dz1[src] += d * p[w2i(o, ch, ky, kx)];
              }
            }
          }
        }
      }
    }
    for (std::size_t ch = 0; ch < c.c1; ++ch) {
      for (std::size_t i = 0; i < c.h1; ++i) {
        for (std::size_t j = 0; j < c.w1; ++j) {
          const double d = dz1[i1(ch, i, j)];
          if (d == 0.0) continue;
          g[c.b1_off + ch] += d;
          for (std::size_t ky = 0; ky < kKernel; ++ky) {
            for (std::size_t kx = 0; kx < kKernel; ++kx) {
              g[c.w1_off + (ch * kKernel + ky) * kKernel + kx] +=
                  d * x[(kStride * i + ky) * c.w + kStride * j + kx];
            }
          }
        }
      }
    }
  }
  if (logits_out) {
    *logits_out = std::move(logits);
    return 0.0;
  }
  return total / static_cast<double>(n);
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  std::array<char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));  // host is little-endian (checked below)
  os.write(b.data(), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  std::array<char, sizeof(T)> b;
  if (!is.read(b.data(), sizeof(T))) data_error(path.string() + ": truncated checkpoint");
  T v;
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'S', 'P', 'B', 'A', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint32_t epoch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) runtime_error("cannot write checkpoint " + path.string());
  const ModelSpec& s = model.spec();
  out.write(kMagic, 8);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.arch));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.num_classes));
  put<std::uint64_t>(out, s.input_dim);
  put<std::uint64_t>(out, s.frames);
  put<std::uint64_t>(out, s.bands);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.hidden.size()));
  for (int h : s.hidden) put<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  put<std::uint64_t>(out, s.init_seed);
  put<std::uint32_t>(out, epoch);
  put<std::uint64_t>(out, model.parameter_count());
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) put<double>(out, model.parameters()(i));
  if (!out) runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) data_error("cannot read checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    data_error(path.string() + ": not a checkpoint file");
  }
  Checkpoint ck;
  const auto arch = get<std::uint32_t>(in, path);
  if (arch > 2) data_error(path.string() + ": unknown arch");
  ck.spec.arch = static_cast<Arch>(arch);
  ck.spec.num_classes = static_cast<int>(get<std::uint32_t>(in, path));
  ck.spec.input_dim = get<std::uint64_t>(in, path);
  ck.spec.frames = get<std::uint64_t>(in, path);
  ck.spec.bands = get<std::uint64_t>(in, path);
  const auto nh = get<std::uint32_t>(in, path);
  if (nh > 16) data_error(path.string() + ": implausible hidden layer count");
  ck.spec.hidden.resize(nh);
  for (auto& h : ck.spec.hidden) h = static_cast<int>(get<std::uint32_t>(in, path));
  ck.spec.init_seed = get<std::uint64_t>(in, path);
  ck.epoch = get<std::uint32_t>(in, path);
  const auto count = get<std::uint64_t>(in, path);
  if (count != ck.spec.parameter_count()) data_error(path.string() + ": parameter count mismatch");
  ck.parameters.resize(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) ck.parameters(static_cast<Eigen::Index>(i)) = get<double>(in, path);
  return ck;
}

}  // namespace spba
