macro_rules! example {
    ($module:ident, $test:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $test() {
            $module::run_example().expect("example should run");
        }
    };
}

example!(lattice_geometry, lattice_geometry_runs, "lattice_geometry.rs");
example!(stationary_profile, stationary_profile_runs, "stationary_profile.rs");
example!(covariance_bound, covariance_bound_runs, "covariance_bound.rs");
example!(junction_layer, junction_layer_runs, "junction_layer.rs");
example!(langevin_dynamics, langevin_dynamics_runs, "langevin_dynamics.rs");
example!(reservoir_harmonic, reservoir_harmonic_runs, "reservoir_harmonic.rs");
example!(fick_scaling, fick_scaling_runs, "fick_scaling.rs");
