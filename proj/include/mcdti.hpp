#pragma once

#include "mcdti/config.hpp"
#include "mcdti/dti.hpp"
#include "mcdti/dunet.hpp"
#include "mcdti/errors.hpp"
#include "mcdti/eval.hpp"
#include "mcdti/gradcheck.hpp"
#include "mcdti/layers.hpp"
#include "mcdti/mcdropout.hpp"
#include "mcdti/ndarray.hpp"
#include "mcdti/nifti.hpp"
#include "mcdti/phantom.hpp"
#include "mcdti/rng.hpp"
#include "mcdti/train.hpp"
#include "mcdti/volume.hpp"
