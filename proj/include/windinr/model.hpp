#pragma once

// Latent-conditioned implicit decoder with its context encoders, the
// reference latent encoder and the no-observation latent predictor.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "windinr/autodiff.hpp"
#include "windinr/field.hpp"
#include "windinr/synth.hpp"

namespace windinr::model {

constexpr std::size_t kTerrainChannels = 64;
constexpr std::size_t kLrChannels = 32;
constexpr std::size_t kFourierBands = 10;
constexpr std::size_t kRbfCenters = 20;
constexpr std::size_t kCoordDim = 4 * kFourierBands + 3 + kRbfCenters;
constexpr std::size_t kQueryFeatureDim = kTerrainChannels + kLrChannels + 2 + kCoordDim;
constexpr std::size_t kGlobalDim = 2 * (kTerrainChannels + kLrChannels);
constexpr std::size_t kLatentDim = 128;
constexpr double kRbfWidth = 1.0 / kRbfCenters;

struct ModelConfig {
  std::size_t hidden = 256;
  std::size_t film_blocks = 4;
  std::size_t groups = 8;  // GroupNorm groups in the encoders
  double tau = 0.30;       // alpha(h) = exp(-h / tau)
  double norm_eps = 1e-5;
};

enum class Block { terrain_encoder, lr_encoder, reference_encoder, noobs_predictor, decoder };
constexpr std::array<Block, 5> kBlocks = {Block::terrain_encoder, Block::lr_encoder, Block::reference_encoder,
                                          Block::noobs_predictor, Block::decoder};
const char* block_name(Block b);

/// Named parameter tensors grouped into blocks; flat order is insertion order.
class ModelParams {
 public:
  struct Entry {
    Block block;
    std::string name;
    Tensor value;
  };

  void add(Block block, std::string name, Tensor value);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::size_t count() const;
  std::size_t count(Block block) const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  /// FNV-1a over the raw bytes of every tensor in a block (or all blocks).
  std::uint64_t hash(Block block) const;
  std::uint64_t hash() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Training-set label statistics per component (u, v, w).
struct NormStats {
  std::array<double, 3> mean = {0.0, 0.0, 0.0};
  std::array<double, 3> std = {1.0, 1.0, 1.0};
};

NormStats label_stats(const std::vector<synth::Case>& cases, std::span<const std::size_t> indices);

class WindModel {
 public:
  /// Fresh parameters: fan-in uniform weights, zero biases, zero final residual layer.
  WindModel(ModelConfig config, std::uint64_t seed);
  WindModel(ModelConfig config, ModelParams params, NormStats norm);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const NormStats& norm() const { return norm_; }
  void set_norm(const NormStats& n) { norm_ = n; }

  std::size_t query_feature_dim() const { return kQueryFeatureDim; }
  std::size_t latent_dim() const { return kLatentDim; }

 private:
  void check_dimensions() const;
  ModelConfig config_;
  ModelParams params_;
  NormStats norm_;
};

// -- graph construction ---------------------------------------------------------

/// Parameters bound into a graph as leaves, created on first use.
class ParamBinding {
 public:
  using Trainable = std::function<bool(Block)>;
  using TrainableByName = std::function<bool(const std::string&)>;
  ParamBinding(ad::Graph& g, const ModelParams& params, Trainable trainable);
  ParamBinding(ad::Graph& g, const ModelParams& params, TrainableByName trainable);
  ad::Var operator()(const std::string& name);
  ad::Graph& graph() const { return *graph_; }
  /// Gradients of the trainable leaves after a backward pass.
  std::map<std::string, Tensor> gradients() const;

 private:
  ad::Graph* graph_;
  const ModelParams* params_;
  std::function<bool(Block, const std::string&)> trainable_;
  std::map<std::string, ad::Var> vars_;
};

inline bool all_blocks(Block) { return true; }
inline bool no_blocks(Block) { return false; }

/// Model inputs of one case, channels-last.
struct CaseInputs {
  Tensor terrain;  // [N*N, 3]
  std::size_t terrain_n = 0;
  Tensor lr;       // [6*6, 3]: u, v (m/s), mask
  std::size_t lr_n = synth::kLrCells;
};

CaseInputs make_inputs(const synth::TerrainGrid& terrain, const synth::Case& c);

struct Context {
  ad::Var f_s;     // [N*N, 64]
  ad::Var f_lr;    // [36, 32]
  ad::Var global;  // [1, 192]
  const CaseInputs* inputs = nullptr;
};

Context encode_context(ParamBinding& w, const ModelConfig& config, const CaseInputs& inputs,
                       kernels::Padding pad = kernels::Padding::zero);

/// Coordinate encoding of length 63; out-of-domain points are clamped and counted.
std::array<double, kCoordDim> encode_coordinates(const QueryPoint& p);
std::size_t clamp_count();

/// alpha(h) = max(exp(-h / tau), 0)
double height_factor(double h, double tau);

struct QueryFeatures {
  ad::Var features;  // [n, 161]
  Tensor baseline;   // [n, 3] alpha(h) * LR (u, v), 0
};

QueryFeatures query_features(const Context& ctx, const WindModel& model, std::span<const QueryPoint> points);

/// Attention-pooled reference latent [1, 128] from support features and normalized labels.
ad::Var reference_encode(ParamBinding& w, const Context& ctx, ad::Var support_features, const Tensor& labels_norm);
/// Deployable latent [1, 128] from the global descriptor only.
ad::Var predict_no_obs(ParamBinding& w, const Context& ctx);

/// Latent-independent stem: SiLU(LayerNorm(Linear(features))), [n, hidden].
ad::Var decoder_stem(ParamBinding& w, const ModelConfig& config, ad::Var features);
/// Remaining decoder: prediction in m/s, [n, 3].
ad::Var decoder_tail(ParamBinding& w, const WindModel& model, ad::Var stem, const Tensor& baseline, ad::Var z);
ad::Var decode(ParamBinding& w, const WindModel& model, const QueryFeatures& q, ad::Var z);

/// Latent field of one case under frozen weights; context is encoded once.
class NeuralField : public LatentField {
 public:
  NeuralField(const WindModel& model, CaseInputs inputs);
  std::size_t latent_dim() const override { return kLatentDim; }
  std::unique_ptr<PointBatch> prepare(std::span<const QueryPoint> points) const override;
  ad::Var decode(ad::Graph& g, const PointBatch& batch, ad::Var z) const override;
  std::uint64_t weight_hash() const override { return model_->params().hash(); }
  /// Decoder tail over a prepared batch under another binding (fine-tuning of tail parameters).
  ad::Var decode_with(ParamBinding& w, const WindModel& model, const PointBatch& batch, ad::Var z) const;

  /// Raw deployable latent z_bg.
  const std::vector<double>& z_background() const { return z_bg_; }
  const CaseInputs& inputs() const { return inputs_; }

 private:
  const WindModel* model_;
  CaseInputs inputs_;
  Tensor f_s_, f_lr_, global_;
  std::vector<double> z_bg_;
};

// -- checkpoint -------------------------------------------------------------------

/// "WINDCKPT" + JSON header + f64 parameter payload.
void save_checkpoint(const std::filesystem::path& path, const WindModel& model);
WindModel load_checkpoint(const std::filesystem::path& path);

}  // namespace windinr::model
