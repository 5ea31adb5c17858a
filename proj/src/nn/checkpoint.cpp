#include "veil/nn/checkpoint.hpp"

#include <sstream>

#include "veil/errors.hpp"

namespace veil::nn {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
    out << "]";
    return out.str();
}

}  // namespace

void save_state(const std::filesystem::path& path, const std::vector<NamedTensorRef>& state) {
    std::vector<NamedTensor> ts;
    ts.reserve(state.size());
    for (const NamedTensorRef& r : state) ts.push_back({r.name, *r.tensor});
    save_tensors(path, ts);
}

void load_state(const std::filesystem::path& path, const std::vector<NamedTensorRef>& state) {
    const std::vector<NamedTensor> ts = load_tensors(path);
    std::ostringstream problems;
    if (ts.size() != state.size())
        problems << "  entry count: expected " << state.size() << ", file has " << ts.size()
                 << "\n";
    const std::size_t n = std::min(ts.size(), state.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (ts[i].name != state[i].name)
            problems << "  entry " << i << ": expected name '" << state[i].name << "', found '"
                     << ts[i].name << "'\n";
        else if (!ts[i].tensor.same_shape(*state[i].tensor))
            problems << "  entry " << i << " ('" << state[i].name << "'): expected shape "
                     << shape_str(state[i].tensor->shape()) << ", found "
                     << shape_str(ts[i].tensor.shape()) << "\n";
    }
    const std::string msg = problems.str();
    if (!msg.empty())
        throw ModelError("checkpoint " + path.string() +
                         " does not match the declared architecture:\n" + msg);
    for (std::size_t i = 0; i < n; ++i) *state[i].tensor = ts[i].tensor;
}

std::string state_hash(const std::vector<NamedTensorRef>& state) {
    std::vector<NamedTensor> ts;
    ts.reserve(state.size());
    for (const NamedTensorRef& r : state) ts.push_back({r.name, *r.tensor});
    return tensors_hash(ts);
}

}  // namespace veil::nn
