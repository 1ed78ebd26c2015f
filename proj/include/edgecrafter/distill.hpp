// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "edgecrafter/losses.hpp"

namespace ec {

enum class TeacherKind { mockS, mockB, linear_probe };

std::string to_string(TeacherKind t);
/// Accepts mockS, mockB, linear_probe and linear-probe.
TeacherKind parse_teacher(const std::string& s);
std::size_t teacher_dim(TeacherKind t);

inline constexpr double kReferenceBatch = 1536.0;

struct DistillConfig {
  TeacherKind teacher = TeacherKind::mockB;
  double base_lr = 4.0;
  std::size_t batch = 128;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  double final_lr_fraction = 1e-3;
  double weight_decay = 1e-6;
  std::size_t aligned_teacher_layers = 2;
  double momentum = 0.9;

  /// Base learning rate of the student variant (4.0 for T/T+, 9.0 for S/S+).
  static DistillConfig for_variant(VitVariant v, TeacherKind teacher);
  void validate() const;
  nlohmann::json to_json() const;
};

double peak_lr(const DistillConfig& config);
std::size_t warmup_steps(std::size_t total_steps, const DistillConfig& config);

/// Linear warm-up from 0 to the peak, then cosine decay to
/// final_lr_fraction * peak at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, const DistillConfig& config);

inline constexpr double kLarsEps = 1e-9;

/// ||p|| / (||g + wd p|| + eps); 1 when ||p|| = 0.
double lars_trust_ratio(std::span<const double> param, std::span<const double> grad, double weight_decay,
                        double eps = kLarsEps);

/// One heavy-ball LARS update: m = mu m + lr * trust * (g + wd p); p -= m.
/// Tensors of rank <= 1 (biases, scalars) are passed with
/// layer_adaptation = false and then take plain momentum steps with trust 1
/// and no weight decay.
void lars_step(std::span<double> param, std::span<const double> grad, double lr, double weight_decay,
               std::vector<double>& momentum_buffer, double momentum = 0.9, bool layer_adaptation = true);

/// Frozen feature source for distillation.
struct Teacher {
  TeacherKind kind = TeacherKind::mockB;
  BackboneConfig config;     // mock teachers
  BackboneParams params;     // mock teachers
  Matrix probe;              // linear_probe: [Dt, Ds]
};

Teacher build_teacher(TeacherKind kind, std::size_t student_dim, Rng& rng);

/// The last `layers` teacher feature maps for an image ([n, Dt] each, spatial
/// tokens only). The linear probe maps the student's final tokens and repeats
/// the result.
std::vector<Matrix> teacher_features(const Teacher& teacher, const Tensor& image, const Matrix& student_final,
                                     std::size_t layers);

struct DistillRun {
  std::vector<double> epoch_loss;  // mean per-token loss per epoch
  double final_loss = 0;           // per-token loss over the dataset after training
  Matrix adapter_weight;           // [Dt, Ds]
  std::vector<double> adapter_bias;
  std::size_t steps = 0;
};

struct DistillOptions {
  bool zero_adapter = false;
};

/// Trains only the adapter with LARS under lr_at; the weight is decayed, the
/// bias is trust-ratio adapted without decay. Student features come from the
/// final backbone block (register rows dropped) and are computed once per
/// image.
DistillRun run_distillation(const BackboneConfig& student_config, const BackboneParams& student,
                            const Teacher& teacher, const std::vector<Tensor>& images, const DistillConfig& config,
                            Rng& rng, const DistillOptions& options = {});

}  // namespace ec
