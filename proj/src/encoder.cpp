#include "veil/encoder.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"
#include "veil/nn/init.hpp"

namespace veil {

VariationalEncoder::VariationalEncoder(const std::string& backbone_preset,
                                       std::size_t resolution, std::size_t latent_dim)
    : backbone_preset_(backbone_preset),
      backbone_(nn::build_arch(nn::preset_arch(
          backbone_preset, {.in_channels = 3, .resolution = resolution, .num_classes = 0}))),
      head_mu_(nn::preset_feature_dim(backbone_preset), latent_dim),
      head_logvar_(nn::preset_feature_dim(backbone_preset), latent_dim),
      latent_dim_(latent_dim),
      resolution_(resolution) {
    backbone_->set_finite_checks(true);
}

std::pair<Tensor, Tensor> VariationalEncoder::encode(const Tensor& X) {
    if (X.ndim() != 4 || X.dim(1) != 3 || X.dim(2) != resolution_ || X.dim(3) != resolution_)
        throw ContractError("encoder expects [B,3," + std::to_string(resolution_) + "," +
                            std::to_string(resolution_) + "] input");
    Tensor feat = backbone_->forward(X);
    Tensor mu = head_mu_.forward(feat);
    logvar_raw_cache_ = head_logvar_.forward(feat);
    Tensor logvar = logvar_raw_cache_;
    for (std::size_t i = 0; i < logvar.numel(); ++i)
        logvar[i] = std::clamp(logvar[i], -kLogVarClamp, kLogVarClamp);
    if (!mu.all_finite() || !logvar.all_finite())
        throw NumericError("non-finite encoder head output");
    return {std::move(mu), std::move(logvar)};
}

Tensor VariationalEncoder::backward(const Tensor& dmu, const Tensor& dlogvar) {
    Tensor dlv = dlogvar;
    for (std::size_t i = 0; i < dlv.numel(); ++i)
        if (std::abs(logvar_raw_cache_[i]) > kLogVarClamp) dlv[i] = 0.0;
    Tensor dfeat = head_mu_.backward(dmu);
    dfeat.add_scaled(head_logvar_.backward(dlv), 1.0);
    return backbone_->backward(dfeat);
}

std::vector<nn::Param*> VariationalEncoder::params() {
    std::vector<nn::Param*> p = backbone_->params();
    for (nn::Param* q : head_mu_.params()) p.push_back(q);
    for (nn::Param* q : head_logvar_.params()) p.push_back(q);
    return p;
}

std::vector<nn::NamedTensorRef> VariationalEncoder::state() {
    std::vector<nn::NamedTensorRef> out;
    for (const nn::NamedTensorRef& r : nn::collect_state(*backbone_))
        out.push_back({"backbone." + r.name, r.tensor});
    for (const nn::NamedTensorRef& r : nn::collect_state(head_mu_))
        out.push_back({"head_mu." + r.name, r.tensor});
    for (const nn::NamedTensorRef& r : nn::collect_state(head_logvar_))
        out.push_back({"head_logvar." + r.name, r.tensor});
    return out;
}

void VariationalEncoder::set_training(bool training) {
    backbone_->set_training(training);
    head_mu_.set_training(training);
    head_logvar_.set_training(training);
}

void VariationalEncoder::init_weights(RngStream& stream) {
    nn::init_he_normal(*backbone_, stream);
    nn::init_he_normal(head_mu_, stream);
    nn::init_he_normal(head_logvar_, stream);
}

nn::json VariationalEncoder::spec() const {
    return nn::json{{"backbone", backbone_preset_},
                    {"backbone_spec", backbone_->spec()},
                    {"latent_dim", latent_dim_}};
}

Reparam reparameterize(const Tensor& mu, const Tensor& log_var, RngStream& noise,
                       bool deterministic) {
    if (!mu.same_shape(log_var)) throw ContractError("mu/log_var shape mismatch");
    Reparam r{mu, Tensor(mu.shape())};
    if (deterministic) return r;
    noise.fill_normal(r.eps.data(), r.eps.numel());
    for (std::size_t i = 0; i < r.z.numel(); ++i)
        r.z[i] = mu[i] + std::exp(0.5 * log_var[i]) * r.eps[i];
    return r;
}

void reparameterize_backward(const Tensor& dz, const Tensor& log_var, const Tensor& eps,
                             Tensor& dmu, Tensor& dlogvar) {
    for (std::size_t i = 0; i < dz.numel(); ++i) {
        dmu[i] += dz[i];
        dlogvar[i] += dz[i] * 0.5 * std::exp(0.5 * log_var[i]) * eps[i];
    }
}

}  // namespace veil
