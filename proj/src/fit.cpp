#include "veil/fit.hpp"

#include <cstdio>

#include "veil/errors.hpp"
#include "veil/nn/adam.hpp"
#include "veil/nn/arch.hpp"
#include "veil/nn/init.hpp"
#include "veil/nn/loss.hpp"

namespace veil {

real classifier_accuracy(nn::Sequential& net, const DatasetHandle& data,
                         std::size_t batch_size) {
    if (data.size() == 0) throw ContractError("accuracy over an empty dataset");
    net.set_training(false);
    std::size_t hits = 0;
    BatchStream batches(data, batch_size);
    Tensor X;
    std::vector<int> Y;
    while (batches.next(X, Y)) {
        const std::vector<int> pred = nn::argmax_rows(net.forward(X));
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == Y[i]) ++hits;
    }
    return 100.0 * static_cast<real>(hits) / static_cast<real>(data.size());
}

FitResult fit_classifier(const std::string& preset, const DatasetHandle& train,
                         const DatasetHandle& test, const FitOptions& opt) {
    nn::ArchParams ap;
    ap.in_channels = 3;
    ap.resolution = train.resolution;
    ap.num_classes = train.num_classes;
    auto net = nn::build_arch(nn::preset_arch(preset, ap));
    net->set_finite_checks(true);

    RngStream weights(derive_seed(opt.seed, "fit-weights", 0));
    nn::init_he_normal(*net, weights);

    const std::vector<nn::Param*> params = net->params();
    nn::Adam::Options ao;
    ao.lr = opt.learning_rate;
    ao.weight_decay = opt.weight_decay;
    nn::Adam adam(params, ao);

    FitResult result;
    for (std::size_t e = 1; e <= opt.epochs; ++e) {
        net->set_training(true);
        BatchStream batches(train, opt.batch_size, opt.seed, e);
        Tensor X;
        std::vector<int> Y;
        while (batches.next(X, Y)) {
            nn::zero_grads(params);
            const Tensor logits = net->forward(X);
            Tensor dlogits(logits.shape());
            nn::softmax_cross_entropy(logits, Y, &dlogits);
            net->backward(dlogits);
            adam.step();
        }
        result.test_accuracy = classifier_accuracy(*net, test, opt.batch_size);
        result.epochs_run = e;
        if (opt.verbose)
            std::printf("  %s epoch %zu: test accuracy %.2f%%\n", preset.c_str(), e,
                        result.test_accuracy);
        if (opt.stop_at_accuracy > 0.0 && result.test_accuracy >= opt.stop_at_accuracy) break;
    }
    result.net = std::move(net);
    return result;
}

}  // namespace veil
