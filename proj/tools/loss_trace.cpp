// Trains the baseline (no enhancement or alignment loss) on a small fixed
// corpus and prints each step's losses as hexadecimal floats, one step per
// line. Built twice, with and without CSLR_DISABLE_AUX_PATHS, so the two
// outputs can be compared bit for bit.

#include <cstdio>

#include "cslr/harness.hpp"
#include "cslr/synthgen.hpp"

int main() {
    cslr::CorpusConfig cc;
    cc.train_count = 24;
    cc.dev_count = 1;
    cc.test_count = 1;
    cc.seed = 5;
    const cslr::Corpus corpus = cslr::generate_corpus(cc);

    cslr::RunConfig rc;
    rc.seed = 3;
    rc.epochs = 3;
    rc.schedule.decay_epochs = {2};
    rc.loss.enable_ve = false;
    rc.loss.enable_va = false;
    cslr::TrainOptions opts;
    opts.evaluate_epochs = false;
    opts.on_step = [](std::size_t step, const cslr::LossBreakdown& l) {
        std::printf("%zu %a %a %a %a\n", step, l.l_ctc, l.l_ve, l.l_va, l.total);
    };
    try {
        cslr::train(rc, corpus, opts);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
