use ppf_core::engine::{Engine, REFERENCE_ENV};

#[test]
fn environment_forces_one_worker() {
    std::env::set_var(REFERENCE_ENV, "1");
    assert_eq!(Engine::from_env(8).unwrap().workers(), 1);
    std::env::set_var(REFERENCE_ENV, "0");
    assert_eq!(Engine::from_env(8).unwrap().workers(), 8);
    std::env::remove_var(REFERENCE_ENV);
    assert_eq!(Engine::from_env(4).unwrap().workers(), 4);
}
