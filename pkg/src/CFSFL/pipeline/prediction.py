from pathlib import Path
from typing import List, Sequence

import pandas as pd

from CFSFL import logger
from CFSFL.components.loop_engine import LoopMode, unroll
from CFSFL.components.model_bundle import ModelBundle
from CFSFL.components.recommender import recommend_top_k
from CFSFL.constants import ITEMS_FILE
from CFSFL.exception import DataError



class PredictionPipeline:
    def __init__(self, checkpoint: Path = Path('artifacts/model_trainer/checkpoints/final.ckpt'),
                 dataset_dir: Path = Path('artifacts/data')):
        self.model = ModelBundle.load(Path(checkpoint))
        items_file = Path(dataset_dir) / ITEMS_FILE
        if not items_file.is_file():
            raise FileNotFoundError(f"item vocabulary not found: {items_file}")
        self.item_ids = list(pd.read_csv(items_file, dtype=str)["item_id"])
        self.model.check_vocabulary(len(self.item_ids))
        self.item_index = {item: j for j, item in enumerate(self.item_ids)}


    def predict(self, items: Sequence[str], k: int = 20, T: int = 0) -> List[str]:
        history = []
        for item in items:
            if item not in self.item_index:
                logger.warning(f"unknown item id {item!r} ignored")
                continue
            history.append(self.item_index[item])
        if not history:
            raise DataError("none of the given items are in the model's vocabulary")
        history = sorted(set(history))

        a = unroll([history], self.model, T, mode=LoopMode.EVAL).final.a.data[0]
        prediction = recommend_top_k(a, history, k)
        if prediction.short:
            logger.warning(f"only {len(prediction.items)} items left to recommend")

        return [self.item_ids[j] for j in prediction.items]
