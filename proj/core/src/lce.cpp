#include "carl/lce.hpp"

namespace carl::model {

LceArch arch_for(envs::EnvName name) {
  LceArch a;
  switch (name) {
    case envs::EnvName::kPlanar:
      a.env = "planar";
      a.n_z = 2;
      a.action_dim = 2;
      a.frames = 1;
      a.height = a.width = 40;
      a.enc_widths = {300, 300};
      a.dec_widths = {300, 300};
      a.dyn_widths = {20, 20};
      a.bwd_nz = 5;
      a.bwd_na = 5;
      a.bwd_nx = 100;
      a.bwd_joint = 100;
      break;
    case envs::EnvName::kSwingup:
      a.env = "swingup";
      a.n_z = 3;
      a.action_dim = 1;
      a.frames = 2;
      a.height = a.width = 48;
      a.enc_widths = {500, 500};
      a.dec_widths = {500, 500};
      a.dyn_widths = {30, 30};
      a.bwd_nz = 10;
      a.bwd_na = 10;
      a.bwd_nx = 200;
      a.bwd_joint = 200;
      break;
    case envs::EnvName::kCartpole:
    case envs::EnvName::kThreepole: {
      bool three = name == envs::EnvName::kThreepole;
      a.env = three ? "threepole" : "cartpole";
      a.n_z = 8;
      a.action_dim = three ? 3 : 1;
      a.frames = 2;
      a.height = a.width = 80;
      a.conv = true;
      a.enc_conv = {{32, 5, 1, 2}, {32, 5, 2, 2}, {32, 5, 2, 2}, {10, 5, 2, 2}};
      a.enc_dense = three ? 500 : 200;
      a.dec_dense = {200, 1000, 100};
      a.dec_conv = {{32, 5, 1, 2, false},
                    {32, 5, 1, 2, true},
                    {32, 5, 1, 2, true},
                    {2, 5, 1, 2, true}};
      a.dyn_widths = {40, 40};
      a.bwd_nz = 10;
      a.bwd_na = 10;
      a.bwd_nx = three ? 400 : 300;
      a.bwd_joint = three ? 400 : 300;
      break;
    }
  }
  return a;
}

}  // namespace carl::model
