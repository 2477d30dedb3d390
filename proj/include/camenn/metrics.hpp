#pragma once

#include <span>

namespace camenn {

/// Mann-Whitney AUC by average ranks; ties count half. Throws ContractError
/// when labels hold a single class or sizes differ.
double auc(std::span<const double> scores, std::span<const double> labels);

/// Fraction of rows where (score >= threshold) agrees with the label.
double accuracy(std::span<const double> scores, std::span<const double> labels, double threshold = 0.5);

}  // namespace camenn
