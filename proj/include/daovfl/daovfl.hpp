#ifndef DAOVFL_DAOVFL_HPP_
#define DAOVFL_DAOVFL_HPP_

#include "daovfl/channel.hpp"
#include "daovfl/denoiser.hpp"
#include "daovfl/envsim.hpp"
#include "daovfl/errors.hpp"
#include "daovfl/experiment.hpp"
#include "daovfl/hindsight.hpp"
#include "daovfl/numkit.hpp"
#include "daovfl/rng.hpp"
#include "daovfl/scheduler.hpp"
#include "daovfl/serialize.hpp"
#include "daovfl/session.hpp"
#include "daovfl/streams.hpp"
#include "daovfl/vflcore.hpp"

#endif  // DAOVFL_DAOVFL_HPP_
