#pragma once

#include "rematch/errors.hpp"
#include "rematch/random.hpp"
#include "rematch/tensor_kit.hpp"
#include "rematch/curl_basis.hpp"
#include "rematch/velocity_priors.hpp"
#include "rematch/flow_lab.hpp"
#include "rematch/recon_model.hpp"
#include "rematch/rematch_train.hpp"
#include "rematch/oracle.hpp"
#include "rematch/io.hpp"
#include "rematch/experiment.hpp"
