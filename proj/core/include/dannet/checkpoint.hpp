#pragma once

#include <string>

#include "dannet/adversarial.hpp"

namespace dannet {

/// Checkpoint layout: a key=value manifest (config fields, seed, step) plus
/// one tensor file per named parameter. Names carry the subset tag, e.g.
/// param.x.stem.conv.weight -> x.stem.conv.weight.dgt.
template <typename Real>
void save_checkpoint(const std::string& dir, const AdversarialModel<Real>& model, int step);

template <typename Real>
AdversarialModel<Real> load_checkpoint(const std::string& dir);

int checkpoint_step(const std::string& dir);

}  // namespace dannet
