#pragma once

#include "cslr/binary_io.hpp"
#include "cslr/checkpoint.hpp"
#include "cslr/config.hpp"
#include "cslr/ctc.hpp"
#include "cslr/error.hpp"
#include "cslr/gradcheck.hpp"
#include "cslr/harness.hpp"
#include "cslr/losses.hpp"
#include "cslr/matrix.hpp"
#include "cslr/optim.hpp"
#include "cslr/prng.hpp"
#include "cslr/report.hpp"
#include "cslr/seqmetrics.hpp"
#include "cslr/seqnet.hpp"
#include "cslr/synthgen.hpp"
#include "cslr/transcripts.hpp"
