"""neuronlock: task-level capability control for MLP weight containers.

Developers select task-specific neurons from activation statistics,
partition them into disjoint keyed subsets, encrypt each subset with
AES-CTR under a key whose distribution is governed by a CP-ABE policy
tree, and ship one encrypted artifact. Deployers decrypt exactly the
subsets their attribute keys satisfy; everything else is detected as
ciphertext and pruned away.
"""

from .container import (
    Dtype,
    LayerSpec,
    ModelContainer,
    NeuronRef,
    forward,
    load,
    neuron_spans,
    read_container,
    save,
    write_container,
)
from .selector import (
    ActivationTrace,
    ImportanceMatrix,
    SelectionResult,
    capacity_check,
    compute_importance,
    estimate_critical_set,
    select_all,
    select_neurons,
    task_specific_scores,
)
from .policy import PolicyNode, and_, attr, or_, parse_policy, parse_policy_file, threshold
from .subsets import Subset, SubsetPartition, build_policies, decompose_subsets
from .abe import (
    AbeBundle,
    AttributeSecretKey,
    MasterKey,
    PublicParams,
    abe_decrypt,
    abe_encrypt,
    abe_keygen,
    abe_setup,
    derive_aes_key,
    encrypt_bundle,
    read_bundle,
    read_master_key,
    read_secret_key,
    recover_keys,
    write_bundle,
    write_master_key,
    write_secret_key,
)
from .cipher import (
    NeuronCipherConfig,
    decrypt_neuron,
    encrypt_model,
    encrypt_neuron,
    load_kmap,
    read_kmap,
    save_kmap,
    write_kmap,
)
from .detection import DetectionThresholds, calibrate_thresholds, detect_decrypted
from .decryptor import DecryptReport, adaptive_prune, decrypt_ce, decrypt_te
from .pairing import PairingGroup, get_group
from .rng import Rng

__version__ = "0.1.0"
