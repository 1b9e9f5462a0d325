// Times one forward+backward step of each model on the desk profile.

#include <chrono>
#include <cstdio>

#include "resseg/objective.hpp"

using namespace resseg;

template <typename T>
double time_step(ModelKind kind, NetworkConfig cfg, int batch, int reps) {
    SegmentationNet<T> net(kind, cfg);
    net.init(1);
    Rng rng(3);
    Batch<T> b;
    b.images = Tensor<T>(batch, 3, cfg.input_size, cfg.input_size);
    for (auto& v : b.images.values()) v = static_cast<T>(uniform_unit(rng));
    for (int i = 0; i < batch; ++i) {
        BinaryMask m(cfg.input_size, cfg.input_size);
        for (auto& p : m.pixels) p = coin(rng);
        b.masks.push_back(m);
    }
    Gradients<T> g(net.params());
    const auto w = LossWeights::standard(net.output_count());
    objective(net, b, w, &g);
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) objective(net, b, w, &g);
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

int main() {
    const NetworkConfig desk = desk_profile();
    std::printf("params (desk, ResSegFixed): %zu\n", SegmentationNet<float>(ModelKind::ResSegFixed, desk).params().scalar_count());
    std::printf("float  batch 4, 64x64, fwd+bwd: %.2f ms\n", time_step<float>(ModelKind::ResSegFixed, desk, 4, 10));
    std::printf("double batch 1, 64x64, fwd+bwd: %.2f ms\n", time_step<double>(ModelKind::ResSegFixed, desk, 1, 10));
    NetworkConfig small = desk;
    small.input_size = 16;
    std::printf("double batch 1, 16x16, fwd+bwd: %.3f ms\n", time_step<double>(ModelKind::ResSegFixed, small, 1, 50));
    SegmentationNet<double> net(ModelKind::ResSegFixed, desk);
    net.init(1);
    Tensor<double> x(1, 3, 64, 64, 0.5);
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < 20; ++r) net.forward(x);
    const auto t1 = std::chrono::steady_clock::now();
    std::printf("double forward only 64x64: %.2f ms\n", std::chrono::duration<double, std::milli>(t1 - t0).count() / 20);
    return 0;
}
