#pragma once

#include "miscalib/appd.hpp"
#include "miscalib/camera_model.hpp"
#include "miscalib/dataset.hpp"
#include "miscalib/errors.hpp"
#include "miscalib/image_io.hpp"
#include "miscalib/perturb_sampler.hpp"
#include "miscalib/rectify.hpp"
#include "miscalib/reproj_sim.hpp"
