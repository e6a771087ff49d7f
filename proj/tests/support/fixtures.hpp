#pragma once

// Small hand-built cohorts for unit tests.

#include <string>
#include <vector>

#include "reprompt/cohort.hpp"
#include "reprompt/numerics/nn.hpp"

namespace reprompt::testing {

inline cohort::CodeVocabulary tiny_vocabulary(std::size_t n = 8) {
    cohort::CodeVocabulary v;
    for (std::size_t i = 0; i < n; ++i) {
        v.diagnoses.push_back("D" + std::to_string(i));
        v.medications.push_back("M" + std::to_string(i));
        v.procedures.push_back("X" + std::to_string(i));
    }
    return v;
}

inline cohort::Visit visit(std::vector<int> dx, std::vector<int> rx = {}, std::vector<int> px = {},
                           std::vector<std::string> note = {}) {
    cohort::Visit v;
    v.dx = std::move(dx);
    v.rx = std::move(rx);
    v.px = std::move(px);
    v.note_tokens = std::move(note);
    return v;
}

inline cohort::Patient patient(std::string id, std::vector<cohort::Visit> visits, int readmission = 1) {
    cohort::Patient p;
    p.id = std::move(id);
    p.visits = std::move(visits);
    p.labels.readmission = readmission;
    p.labels.mortality = 0;
    p.labels.medication = p.visits.back().rx;
    return p;
}

// Fixed random weights that turn a tensor into a scalar loss with a generic gradient.
inline numerics::Tensor projection_weights(const numerics::Shape& shape, std::uint64_t seed) {
    numerics::Rng rng(seed);
    return numerics::normal_tensor(shape, 1.0, rng, false);
}

}  // namespace reprompt::testing
