#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// A policy is improper on a state whose value was requested, so the Bellman
/// system restricted to that state has no finite solution.
class SingularSystem : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    NoConvergence(const std::string& what, std::size_t iterations)
        : Error(what), iterations_(iterations) {}
    std::size_t iterations() const { return iterations_; }

private:
    std::size_t iterations_;
};

class StepCapExceeded : public Error {
public:
    StepCapExceeded(std::size_t episode, std::size_t cap)
        : Error("episode " + std::to_string(episode) + " exceeded the step cap of " +
                std::to_string(cap)),
          episode_(episode), cap_(cap) {}
    std::size_t episode() const { return episode_; }
    std::size_t cap() const { return cap_; }

private:
    std::size_t episode_;
    std::size_t cap_;
};

class EstimationAborted : public Error {
public:
    using Error::Error;
};

/// One violated invariant found by `check_mdp`.
struct MdpIssue {
    enum class Kind { RowNotStochastic, GoalUnreachableFrom };
    Kind kind;
    std::size_t state = 0;
    std::size_t action = 0;  ///< meaningful for RowNotStochastic only
    double row_sum = 0.0;    ///< meaningful for RowNotStochastic only

    std::string describe() const {
        if (kind == Kind::RowNotStochastic)
            return "RowNotStochastic(s=" + std::to_string(state) + ", a=" + std::to_string(action) +
                   ", sum=" + std::to_string(row_sum) + ")";
        return "GoalUnreachableFrom(" + std::to_string(state) + ")";
    }
};

class InvalidMdp : public Error {
public:
    explicit InvalidMdp(std::vector<MdpIssue> issues)
        : Error(summarize(issues)), issues_(std::move(issues)) {}
    const std::vector<MdpIssue>& issues() const { return issues_; }

private:
    static std::string summarize(const std::vector<MdpIssue>& issues) {
        std::string out = "invalid MDP:";
        for (const auto& i : issues) out += " " + i.describe();
        return out;
    }
    std::vector<MdpIssue> issues_;
};

}  // namespace ssp
