# RankSight Core Package
