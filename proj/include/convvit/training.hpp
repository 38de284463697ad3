#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "convvit/model.hpp"

namespace convvit {

// Linear warmup to base_lr, then cosine decay toward eta_min.
struct ScheduleConfig {
    double base_lr = 5e-4;
    int warmup_epochs = 10;
    int total_epochs = 310;
    double eta_min = 0.0;
};

double lr_at(const ScheduleConfig& schedule, int epoch);

// Gradients keyed and ordered exactly like named_parameters.
using GradMap = std::vector<std::pair<std::string, Tensor>>;

GradMap zero_gradients(Model& model);

// Adds one sample's gradient of the (already scaled) logit adjoint to grads.
// The cache must come from a forward() call on the same model state.
void accumulate_backward(Model& model, const ForwardCache& cache, const Tensor& dlogits,
                         GradMap& grads);

GradMap backward(Model& model, const ForwardCache& cache, const Tensor& dlogits);

double cross_entropy(const Tensor& logits, int target);
// d(mean CE)/d(logits) for one sample: softmax(logits) - onehot.
Tensor cross_entropy_grad(const Tensor& logits, int target);
double accuracy(const std::vector<Tensor>& logit_batch, const std::vector<int>& targets);
int argmax(const Tensor& logits);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    int step = 0;
    std::vector<Tensor> first_moment;   // aligned with named_parameters
    std::vector<Tensor> second_moment;
};

AdamState init_adam(Model& model, AdamConfig config = {});
void adam_step(AdamState& state, Model& model, const GradMap& grads, double lr);

// --- toy data -------------------------------------------------------------

enum class ToyKind { QuadrantBlob, TwoClassTexture };

struct ToyDataset {
    ToyKind kind = ToyKind::QuadrantBlob;
    int image_size = 16;
    int count = 256;
    std::uint64_t seed = 1;

    int num_classes() const { return kind == ToyKind::QuadrantBlob ? 4 : 2; }
};

struct Sample {
    Tensor image;  // [1, S, S]
    int label = 0;
    // Object bounding box (exclusive end); the full image for textures.
    int box_y0 = 0, box_x0 = 0, box_y1 = 0, box_x1 = 0;
};

// Bit-identical regeneration from (kind, size, count, seed); labels balanced
// round-robin.
std::vector<Sample> generate_dataset(const ToyDataset& spec);

// --- training loop -----------------------------------------------------------

struct TrainOptions {
    int epochs = 50;
    int batch_size = 64;
    std::uint64_t seed = 42;
    std::string metrics_csv;  // empty: keep the log in memory only
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    std::string csv_text;  // header plus one row per epoch
};

// Single-threaded minibatch training with a fixed reduction order; throws
// state_error when the loss stops being finite.
TrainResult train(Model& model, const ToyDataset& train_spec, const ToyDataset& val_spec,
                  const ScheduleConfig& schedule, const TrainOptions& options);

} // namespace convvit
