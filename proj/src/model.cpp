#include "gstrs/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gstrs {

namespace {

void fill_uniform(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : m.values()) v = u(rng);
}

// y = W x + b for every row of x.
Matrix affine(const Matrix& weight, const Vector& bias, const Matrix& x) {
  Matrix y(x.rows(), weight.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    for (std::size_t o = 0; o < weight.rows(); ++o) y(i, o) = dot(weight.row(o), xi) + bias[o];
  }
  return y;
}

}  // namespace

EmbeddingModel EmbeddingModel::init(std::size_t d_in, std::size_t d_out, std::size_t d_hidden,
                                    bool normalize, std::uint64_t seed) {
  if (d_in == 0) throw Error("input dimension must be at least 1");
  if (d_out < 2) throw Error("embedding dimension must be at least 2");
  Rng rng = make_rng(seed, 0xe3b);
  EmbeddingModel m;
  m.normalize = normalize;
  std::size_t d_mid = d_in;
  if (d_hidden > 0) {
    m.hidden_weight = Matrix(d_hidden, d_in);
    fill_uniform(m.hidden_weight, d_in, d_hidden, rng);
    m.hidden_bias.assign(d_hidden, 0.0);
    d_mid = d_hidden;
  }
  m.weight = Matrix(d_out, d_mid);
  fill_uniform(m.weight, d_mid, d_out, rng);
  m.bias.assign(d_out, 0.0);
  return m;
}

EmbeddingModel EmbeddingModel::identity(std::size_t dim, bool normalize) {
  EmbeddingModel m;
  m.weight = Matrix::identity(dim);
  m.bias.assign(dim, 0.0);
  m.normalize = normalize;
  return m;
}

ClassifierHead ClassifierHead::init(std::size_t d_out, std::size_t n_classes,
                                    std::uint64_t seed) {
  if (n_classes < 2) throw Error("classifier needs at least 2 classes");
  Rng rng = make_rng(seed, 0xc1a55);
  ClassifierHead h;
  h.weight = Matrix(n_classes, d_out);
  fill_uniform(h.weight, d_out, n_classes, rng);
  h.bias.assign(n_classes, 0.0);
  return h;
}

EmbeddingForward embed_forward(const EmbeddingModel& model, const FeatureMatrix& features,
                               std::optional<bool> normalize) {
  if (features.dim() != model.input_dim()) {
    throw Error("dimension mismatch: features have " + std::to_string(features.dim()) +
                ", model expects " + std::to_string(model.input_dim()));
  }
  EmbeddingForward fwd;
  const Matrix* mid = &features.matrix();
  if (model.has_hidden()) {
    fwd.hidden = affine(model.hidden_weight, model.hidden_bias, features.matrix());
    for (auto& v : fwd.hidden.values()) v = std::tanh(v);
    mid = &fwd.hidden;
  }
  fwd.pre_norm = affine(model.weight, model.bias, *mid);

  if (!normalize.value_or(model.normalize)) {
    fwd.output = FeatureMatrix(fwd.pre_norm);
    return fwd;
  }
  Matrix out(fwd.pre_norm.rows(), fwd.pre_norm.cols());
  fwd.norms.resize(out.rows());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double n = norm(fwd.pre_norm.row(i));
    if (!(n > 0.0)) throw Error("zero norm embedding for sample " + std::to_string(i));
    fwd.norms[i] = n;
    for (std::size_t d = 0; d < out.cols(); ++d) out(i, d) = fwd.pre_norm(i, d) / n;
  }
  fwd.output = FeatureMatrix(std::move(out));
  return fwd;
}

FeatureMatrix embed(const EmbeddingModel& model, const FeatureMatrix& features) {
  return embed_forward(model, features).output;
}

EmbeddingGrads backprop_embedding(const EmbeddingModel& model, const FeatureMatrix& inputs,
                                  const Matrix& grad_outputs, std::optional<bool> normalize) {
  return backprop_embedding(model, inputs, embed_forward(model, inputs, normalize), grad_outputs);
}

EmbeddingGrads backprop_embedding(const EmbeddingModel& model, const FeatureMatrix& inputs,
                                  const EmbeddingForward& forward, const Matrix& grad_outputs) {
  const std::size_t n = inputs.rows();
  const std::size_t d_out = model.output_dim();
  if (grad_outputs.rows() != n || grad_outputs.cols() != d_out) {
    throw Error("gradient shape " + std::to_string(grad_outputs.rows()) + "x" +
                std::to_string(grad_outputs.cols()) + " does not match outputs " +
                std::to_string(n) + "x" + std::to_string(d_out));
  }
  const bool normalized = !forward.norms.empty();

  // Gradient with respect to the pre-normalization activations.
  Matrix grad_pre = grad_outputs;
  if (normalized) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = forward.output.row(i);
      const auto g = grad_outputs.row(i);
      const double yg = dot(y, g);
      for (std::size_t d = 0; d < d_out; ++d) {
        grad_pre(i, d) = (g[d] - y[d] * yg) / forward.norms[i];
      }
    }
  }

  const Matrix& mid = model.has_hidden() ? forward.hidden : inputs.matrix();
  EmbeddingGrads grads;
  grads.weight = Matrix(d_out, mid.cols());
  grads.bias.assign(d_out, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = mid.row(i);
    for (std::size_t o = 0; o < d_out; ++o) {
      const double g = grad_pre(i, o);
      grads.bias[o] += g;
      auto w = grads.weight.row(o);
      for (std::size_t k = 0; k < h.size(); ++k) w[k] += g * h[k];
    }
  }
  if (!model.has_hidden()) return grads;

  const std::size_t d_hidden = model.hidden_dim();
  grads.hidden_weight = Matrix(d_hidden, inputs.dim());
  grads.hidden_bias.assign(d_hidden, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = inputs.row(i);
    for (std::size_t k = 0; k < d_hidden; ++k) {
      double g = 0.0;
      for (std::size_t o = 0; o < d_out; ++o) g += model.weight(o, k) * grad_pre(i, o);
      const double hk = forward.hidden(i, k);
      g *= 1.0 - hk * hk;
      grads.hidden_bias[k] += g;
      auto w = grads.hidden_weight.row(k);
      for (std::size_t j = 0; j < x.size(); ++j) w[j] += g * x[j];
    }
  }
  return grads;
}

Matrix logits(const ClassifierHead& head, const FeatureMatrix& embedded) {
  if (embedded.dim() != head.input_dim()) {
    throw Error("dimension mismatch: embedding has " + std::to_string(embedded.dim()) +
                ", classifier expects " + std::to_string(head.input_dim()));
  }
  return affine(head.weight, head.bias, embedded.matrix());
}

SgdOptimizer::SgdOptimizer(double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error("learning rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must be in [0, 1)");
}

void SgdOptimizer::step(std::string_view block, std::span<double> params,
                        std::span<const double> grads) {
  if (params.size() != grads.size()) {
    throw Error("gradient size mismatch for parameter block '" + std::string(block) + "'");
  }
  if (!all_finite(grads)) {
    throw Error("non-finite gradient in parameter block '" + std::string(block) + "'");
  }
  auto it = velocity_.find(block);
  if (it == velocity_.end()) it = velocity_.emplace(std::string(block), Vector(params.size())).first;
  auto& v = it->second;
  for (std::size_t i = 0; i < params.size(); ++i) {
    v[i] = momentum_ * v[i] - learning_rate_ * grads[i];
    params[i] += v[i];
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_array(std::ostream& out, std::span<const double> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get() {
    T v{};
    take(&v, sizeof(T));
    return v;
  }

  void get_array(std::span<double> out) { take(out.data(), out.size() * sizeof(double)); }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void take(void* dst, std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw Error("truncated checkpoint at byte offset " + std::to_string(pos_) + ": expected " +
                  std::to_string(n) + " more bytes");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto& m = ckpt.model;
  if (ckpt.head.input_dim() != m.output_dim()) throw Error("classifier/embedding dim mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(m.normalize ? 1 : 0));
  put(out, static_cast<std::uint64_t>(m.input_dim()));
  put(out, static_cast<std::uint64_t>(m.hidden_dim()));
  put(out, static_cast<std::uint64_t>(m.output_dim()));
  put(out, static_cast<std::uint64_t>(ckpt.head.num_classes()));
  if (m.has_hidden()) {
    put_array(out, m.hidden_weight.values());
    put_array(out, m.hidden_bias);
  }
  put_array(out, m.weight.values());
  put_array(out, m.bias);
  put_array(out, ckpt.head.weight.values());
  put_array(out, ckpt.head.bias);
  if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));

  char magic[8];
  for (auto& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error("bad magic at byte offset 0");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto flags = r.get<std::uint32_t>();
  const auto d_in = r.get<std::uint64_t>();
  const auto d_hidden = r.get<std::uint64_t>();
  const auto d_out = r.get<std::uint64_t>();
  const auto n_classes = r.get<std::uint64_t>();
  constexpr std::uint64_t kMaxDim = 1u << 20;
  if (d_in == 0 || d_out == 0 || d_in > kMaxDim || d_hidden > kMaxDim || d_out > kMaxDim ||
      n_classes > kMaxDim) {
    throw Error("implausible checkpoint dimensions");
  }

  Checkpoint ckpt;
  auto& m = ckpt.model;
  m.normalize = (flags & 1u) != 0;
  const std::size_t d_mid = d_hidden > 0 ? d_hidden : d_in;
  if (d_hidden > 0) {
    m.hidden_weight = Matrix(d_hidden, d_in);
    m.hidden_bias.resize(d_hidden);
    r.get_array(m.hidden_weight.values());
    r.get_array(m.hidden_bias);
  }
  m.weight = Matrix(d_out, d_mid);
  m.bias.resize(d_out);
  r.get_array(m.weight.values());
  r.get_array(m.bias);
  ckpt.head.weight = Matrix(n_classes, d_out);
  ckpt.head.bias.resize(n_classes);
  r.get_array(ckpt.head.weight.values());
  r.get_array(ckpt.head.bias);
  if (!r.at_end()) {
    throw Error("trailing bytes after checkpoint payload at byte offset " +
                std::to_string(r.pos()));
  }
  return ckpt;
}

}  // namespace gstrs
