# Scenarios Module
# Named benchmark profiles

from shared.constants import AttackDefaults, CONFIG_SCHEMA_VERSION, FIXED_Q_VALUES

# Clean and adversarially trained victim at three radii, every attack
PROFILE_REFERENCE = {
    'name': 'reference',
    'iters': AttackDefaults.ITERS,
    'eps': '4/255,8/255,12/255',
    'attacks': 'ce,segpgd,cospgd,js,maskedce,tsallis@' + AttackDefaults.Q_SCHEDULE,
    'phases': '2@0.3,1.5@0.3,1@0.4',
}

# Same grid at the full 300-iteration protocol budget
PROFILE_FULL_DESK = {
    **PROFILE_REFERENCE,
    'name': 'full_desk',
    'iters': AttackDefaults.PROTOCOL_ITERS,
}

# One Tsallis attack per fixed q; the report's Best-of row combines them per image
PROFILE_FIXED_Q = {
    'name': 'fixed_q',
    'iters': AttackDefaults.ITERS,
    'eps': '8/255',
    'attacks': ','.join(f'tsallis@fixed:{q:g}' for q in FIXED_Q_VALUES),
    'phases': '2@0.3,1.5@0.3,1@0.4',
}

PROFILES = {p['name']: p for p in (PROFILE_REFERENCE, PROFILE_FULL_DESK, PROFILE_FIXED_Q)}


def profile_values(name: str, dataset_dir: str, models: str, output_dir: str, seed: int = 0) -> dict:
    """Config key/values for a profile, in the same shape a config file parses to."""
    if name not in PROFILES:
        raise ValueError(f"Unknown profile '{name}'; choose from {sorted(PROFILES)}")
    profile = PROFILES[name]
    return {
        'schema_version': str(CONFIG_SCHEMA_VERSION),
        'dataset_dir': dataset_dir,
        'models': models,
        'eps': profile['eps'],
        'attacks': profile['attacks'],
        'iters': str(profile['iters']),
        'phases': profile['phases'],
        'seed': str(seed),
        'output_dir': output_dir,
    }
