#pragma once

#include <vector>

#include <Eigen/Core>

#include "merg3r/alignment.h"
#include "merg3r/geometry.h"
#include "merg3r/track.h"

namespace merg3r {

struct BAObservation {
  int camera = 0;
  int point = 0;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double confidence = 1.0;  // Confidence of the observation's track.
};

struct BAProblem {
  std::vector<CameraParams> cameras;
  std::vector<Eigen::Vector3d> points;
  std::vector<BAObservation> observations;

  // Throws kInvalidInput for out-of-range indices, negative confidences or
  // points with fewer than min_track_len observations.
  void Validate(int min_track_len = 2) const;
};

enum class BAStepRule {
  // Per-coordinate adaptive moments on normalised parameters.
  kAdaptive,
  // Plain gradient step on normalised parameters.
  kScaledGradient,
};

struct BAConfig {
  int iterations = 300;
  double initial_lr = 3e-3;
  // Learning rate at the last iteration as a fraction of initial_lr.
  double final_lr_fraction = 0.0;
  double lambda = 0.5;
  double epsilon = 1e-8;
  // Per-observation penalty added for points behind the camera.
  double behind_penalty = 1e4;
  bool optimize_intrinsics = true;
  // All cameras share the first camera's intrinsics.
  bool shared_intrinsics = false;
  BAStepRule step_rule = BAStepRule::kAdaptive;
  int threads = 1;

  void Validate() const;
};

struct BALoss {
  double loss = 0.0;
  int behind_camera = 0;
};

BALoss EvaluateBALoss(const BAProblem& problem, const BAConfig& config);

struct BAGradients {
  std::vector<Eigen::Vector3d> rotation;    // Left increment R <- Exp(w) R.
  std::vector<Eigen::Vector3d> translation;
  std::vector<Eigen::Vector4d> intrinsics;  // fx, fy, cx, cy.
  std::vector<Eigen::Vector3d> points;
  BALoss loss;
};

BAGradients EvaluateBAGradients(const BAProblem& problem,
                                const BAConfig& config);

struct BAResult {
  BAProblem problem;  // Best iterate.
  std::vector<double> loss_history;  // iterations + 1 entries.
  std::vector<double> lr_history;    // Learning rate used after each entry.
  int best_iteration = 0;
  int behind_camera = 0;             // At the best iterate.
};

// Cosine-annealed learning rate for step `it` of `iterations`.
double CosineLearningRate(const BAConfig& config, int it);

// Throws kDivergence when the loss or a gradient becomes non-finite.
BAResult RunBundleAdjustment(const BAProblem& problem, const BAConfig& config);

double MeanReprojectionError(const BAProblem& problem);

// Cameras follow scene.frames; point l is tracks[l].point.
BAProblem BuildBAProblem(const MergedScene& scene,
                         const std::vector<Track>& tracks);

// Writes refined cameras and track points back and re-unprojects the dense
// cloud through the refined cameras.
void ApplyBAResult(const BAProblem& refined, MergedScene& scene,
                   std::vector<Track>& tracks, double conf_floor = 0.0);

}  // namespace merg3r
