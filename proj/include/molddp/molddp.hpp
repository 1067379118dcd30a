#pragma once

#include "molddp/bench.hpp"
#include "molddp/binio.hpp"
#include "molddp/collective.hpp"
#include "molddp/dataload.hpp"
#include "molddp/ddp.hpp"
#include "molddp/elements.hpp"
#include "molddp/error.hpp"
#include "molddp/gcnn.hpp"
#include "molddp/gpack.hpp"
#include "molddp/graphenc.hpp"
#include "molddp/metrics.hpp"
#include "molddp/objstore.hpp"
#include "molddp/preprocess.hpp"
#include "molddp/rng.hpp"
#include "molddp/smiles.hpp"
#include "molddp/synth.hpp"
#include "molddp/transport.hpp"
