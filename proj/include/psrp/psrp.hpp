#pragma once

#include "psrp/augment.hpp"
#include "psrp/checkpoint.hpp"
#include "psrp/corpus.hpp"
#include "psrp/cpi.hpp"
#include "psrp/encoder.hpp"
#include "psrp/error.hpp"
#include "psrp/eval.hpp"
#include "psrp/gradcheck.hpp"
#include "psrp/kv.hpp"
#include "psrp/nn.hpp"
#include "psrp/optim.hpp"
#include "psrp/perm.hpp"
#include "psrp/pretrain.hpp"
#include "psrp/rng.hpp"
#include "psrp/synthetic.hpp"
