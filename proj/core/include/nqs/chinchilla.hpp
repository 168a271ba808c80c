#pragma once

#include <cstdint>
#include <vector>

#include "nqs/dataset.hpp"
#include "nqs/optim.hpp"

namespace nqs {

// L(N, D) = E_irr + P / N^(p-1) + Q / D^((p-1)/q)
struct ChinParams {
  double approx_exponent = 2.0;  // p > 1
  double size_scale = 1.0;       // P
  double data_exponent = 1.0;    // q
  double data_scale = 1.0;       // Q
  double irreducible = 0.0;      // E_irr

  bool operator==(const ChinParams&) const = default;
};

void validate(const ChinParams& phi);

double chin_loss(const ChinParams& phi, double n_params, double tokens);

std::vector<Range> default_chin_init_ranges();  // p, q, log P, log Q, e_irr

struct ChinInitOutcome {
  std::size_t index = 0;
  double objective = 0.0;
};

struct ChinFitResult {
  ChinParams best;
  double best_objective = 0.0;
  std::vector<ChinInitOutcome> per_init;
  bool refined = false;
};

// Multi-start minimisation of the mean Huber distance between log predictions
// and log observed losses, with D = B * K * seq_len taken from each record.
ChinFitResult chin_fit(const ScalingDataset& data, const FitConfig& config);

double chin_objective(const ChinParams& phi, const ScalingDataset& data, double delta,
                      Residual residual = Residual::huber);

enum class AllocationBoundary { interior, all_to_data, all_to_params };

struct ChinAllocation {
  double n_params = 0.0;
  double tokens = 0.0;
  double sequences = 0.0;  // tokens / seq_len
  double loss = 0.0;
  AllocationBoundary boundary = AllocationBoundary::interior;
};

// Minimises chin_loss on 6 N D = C by golden-section search over log N.
ChinAllocation chin_optimal_nd(const ChinParams& phi, double compute, std::int64_t seq_len = 1);

}  // namespace nqs
